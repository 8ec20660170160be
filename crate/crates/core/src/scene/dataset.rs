//! On-disk pose datasets: `images.bin` (u8 HWC records), `poses.csv` and
//! `manifest.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use super::pose::{sample_pose, PoseRanges, PoseSample, RelativeGatePose};
use super::render::{render, SceneParams};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const IMAGES_FILE: &str = "images.bin";
pub const POSES_FILE: &str = "poses.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
const POSES_HEADER: &str = "r,theta,phi,psi,roll,pitch";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: String,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub hfov: f64,
    pub seed: u64,
    pub stream: u64,
    pub ranges: PoseRanges,
    pub scene: SceneParams,
    #[serde(default)]
    pub note: String,
}

impl DatasetManifest {
    pub fn camera(&self) -> CameraIntrinsics {
        CameraIntrinsics { width: self.width, height: self.height, hfov: self.hfov }
    }

    pub fn record_len(&self) -> usize {
        3 * self.height * self.width
    }
}

#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub image: Tensor,
    pub pose: RelativeGatePose,
    pub roll: f64,
    pub pitch: f64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Rounds a `[0,1]` CHW image to interleaved u8 RGB.
pub fn to_rgb8(img: &Tensor) -> Vec<u8> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    let mut out = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            out.push((d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Inverse of [`to_rgb8`] up to quantization.
pub fn from_rgb8(bytes: &[u8], height: usize, width: usize) -> Tensor {
    let hw = height * width;
    let mut data = vec![0.0f32; 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            data[c * hw + p] = bytes[3 * p + c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, height, width], data).expect("record length matches shape")
}

/// Renders one sample from its own random stream, quantized as on disk.
pub fn render_sample(rng: &mut Rng, cam: &CameraIntrinsics, scene: &SceneParams, ranges: &PoseRanges) -> Result<(PoseSample, Vec<u8>)> {
    let s = sample_pose(rng, ranges)?;
    let look = scene.jittered(rng);
    let img = render(cam, &look, &s.pose, s.roll, s.pitch);
    Ok((s, to_rgb8(&img)))
}

/// In-memory counterpart of [`generate_dataset`]: the same samples, already
/// quantized and converted back to `[0,1]` images.
pub fn render_samples(n: usize, rng: &Rng, cam: &CameraIntrinsics, scene: &SceneParams, ranges: &PoseRanges) -> Result<Vec<LabeledSample>> {
    cam.validate()?;
    scene.validate()?;
    ranges.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let (s, bytes) = render_sample(&mut rng.substream(i as u64), cam, scene, ranges)?;
            let image = from_rgb8(&bytes, cam.height, cam.width);
            Ok(LabeledSample { image, pose: s.pose, roll: s.roll, pitch: s.pitch })
        })
        .collect()
}

/// Removes the listed files if the guard is dropped before `commit`.
pub(crate) struct PartialWrite {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl PartialWrite {
    pub(crate) fn new(paths: Vec<PathBuf>) -> Self {
        Self { paths, committed: false }
    }

    pub(crate) fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for PartialWrite {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::dataset(format!("{}: {e}", path.display()))
}

/// Generates `n` labeled samples into `out_dir`. Sample `i` draws everything
/// from `rng.substream(i)`, so the output depends only on the seed, stream,
/// count and settings.
pub fn generate_dataset(
    n: usize,
    rng: &Rng,
    cam: &CameraIntrinsics,
    scene: &SceneParams,
    ranges: &PoseRanges,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cam.validate()?;
    scene.validate()?;
    ranges.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        kind: "representation".into(),
        n,
        height: cam.height,
        width: cam.width,
        hfov: cam.hfov,
        seed: rng.seed(),
        stream: rng.stream(),
        ranges: *ranges,
        scene: *scene,
        note: "onboard gate views with relative gate poses".into(),
    };
    let paths: Vec<PathBuf> = [IMAGES_FILE, POSES_FILE, MANIFEST_FILE].iter().map(|f| out_dir.join(f)).collect();
    let guard = PartialWrite::new(paths.clone());

    let mut images = std::io::BufWriter::new(fs::File::create(&paths[0]).map_err(|e| io_err(&paths[0], e))?);
    let mut poses = String::from(POSES_HEADER);
    poses.push('\n');
    const CHUNK: usize = 512;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let rendered: Vec<Result<(PoseSample, Vec<u8>)>> = (start..end)
            .into_par_iter()
            .map(|i| render_sample(&mut rng.substream(i as u64), cam, scene, ranges))
            .collect();
        for item in rendered {
            let (s, bytes) = item?;
            images.write_all(&bytes).map_err(|e| io_err(&paths[0], e))?;
            let p = s.pose;
            poses.push_str(&format!("{},{},{},{},{},{}\n", p.r, p.theta, p.phi, p.psi, s.roll, s.pitch));
        }
    }
    images.flush().map_err(|e| io_err(&paths[0], e))?;
    drop(images);
    fs::write(&paths[1], poses).map_err(|e| io_err(&paths[1], e))?;
    write_manifest(&paths[2], &manifest)?;
    guard.commit();
    Ok(manifest)
}

pub(crate) fn write_manifest<T: Serialize>(path: &Path, manifest: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::dataset(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::dataset(format!("{}: {e}", path.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::dataset(format!("unsupported dataset format version {}", m.format_version)));
    }
    if m.kind != "representation" {
        return Err(Error::dataset(format!("expected a representation dataset, found `{}`", m.kind)));
    }
    Ok(m)
}

fn parse_row(line: &str, index: usize) -> Result<[f64; 6]> {
    let mut out = [0.0; 6];
    let mut fields = line.split(',');
    for slot in &mut out {
        let f = fields.next().ok_or_else(|| Error::dataset(format!("poses.csv record {index} has too few fields")))?;
        *slot = f.trim().parse().map_err(|_| Error::dataset(format!("poses.csv record {index}: bad number `{f}`")))?;
    }
    if fields.next().is_some() {
        return Err(Error::dataset(format!("poses.csv record {index} has too many fields")));
    }
    Ok(out)
}

/// Loads a dataset written by [`generate_dataset`], checking counts, shapes
/// and that every pose lies inside the recorded ranges.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let cam = manifest.camera();
    cam.validate()?;
    let rec = manifest.record_len();
    let img_path = dir.join(IMAGES_FILE);
    let blob = fs::read(&img_path).map_err(|e| io_err(&img_path, e))?;
    if blob.len() < rec * manifest.n {
        let index = blob.len() / rec;
        return Err(Error::dataset(format!(
            "images.bin is truncated: record {index} is incomplete ({} of {} bytes expected)",
            blob.len(),
            rec * manifest.n
        )));
    }
    if blob.len() > rec * manifest.n {
        return Err(Error::dataset(format!("images.bin holds more than the {} records in the manifest", manifest.n)));
    }
    let pose_path = dir.join(POSES_FILE);
    let text = fs::read_to_string(&pose_path).map_err(|e| io_err(&pose_path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(POSES_HEADER) {
        return Err(Error::dataset("poses.csv header mismatch"));
    }
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != manifest.n {
        return Err(Error::dataset(format!(
            "poses.csv has {} records but the manifest lists {}; record {} is the first mismatch",
            rows.len(),
            manifest.n,
            rows.len().min(manifest.n)
        )));
    }
    let mut samples = Vec::with_capacity(manifest.n);
    for (i, row) in rows.iter().enumerate() {
        let v = parse_row(row, i)?;
        let pose = RelativeGatePose { r: v[0], theta: v[1], phi: v[2], psi: v[3] };
        let s = PoseSample { pose, roll: v[4], pitch: v[5] };
        if pose.validate().is_err() || !manifest.ranges.contains(&s) {
            return Err(Error::dataset(format!("record {i} lies outside the manifest pose ranges")));
        }
        let image = from_rgb8(&blob[i * rec..(i + 1) * rec], cam.height, cam.width);
        samples.push(LabeledSample { image, pose, roll: s.roll, pitch: s.pitch });
    }
    Ok(Dataset { manifest, samples })
}

/// Writes a CHW `[0,1]` image as binary PPM (P6).
pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(to_rgb8(img));
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}
