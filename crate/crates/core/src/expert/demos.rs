use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Expert, PursuitConfig};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::scene::dataset::{from_rgb8, to_rgb8, write_manifest, PartialWrite, IMAGES_FILE, MANIFEST_FILE};
use crate::scene::CameraIntrinsics;
use crate::simulator::{make_track, rollout, Limits, Observation, Pilot, RolloutConfig, Termination, VelocityCommand, GATE_COUNT};

pub const DEMO_FORMAT_VERSION: u32 = 1;
pub const ACTIONS_FILE: &str = "actions.csv";
const ACTIONS_HEADER: &str = "vx,vy,vz,vpsi,nvx,nvy,nvz,nvpsi";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    /// Records to collect; the last episode is truncated to hit it exactly.
    pub records: usize,
    pub laps: usize,
    /// Offset amplitudes cycled across episodes.
    pub amplitudes: Vec<f64>,
    /// Keep every `stride`-th control tick.
    pub stride: usize,
    pub pursuit: PursuitConfig,
    pub rollout: RolloutConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            records: 8000,
            laps: 1,
            amplitudes: vec![0.0, 1.0, 2.0, 3.0],
            stride: 1,
            pursuit: PursuitConfig::default(),
            rollout: RolloutConfig::default(),
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.laps == 0 || self.stride == 0 || self.amplitudes.is_empty() {
            return Err(Error::config("demonstrations need laps ≥ 1, stride ≥ 1 and at least one amplitude"));
        }
        if self.amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::config("offset amplitudes must be finite and non-negative"));
        }
        self.rollout.camera.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoManifest {
    pub format_version: u32,
    pub kind: String,
    /// Episodes whose records were kept.
    pub episodes: usize,
    /// Stored records, one per kept control tick.
    pub ticks: usize,
    /// Offset amplitude of every kept episode.
    pub amplitudes: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Episodes dropped because the expert failed to finish them.
    pub discarded: usize,
    pub height: usize,
    pub width: usize,
    pub hfov: f64,
}

impl DemoManifest {
    pub fn camera(&self) -> CameraIntrinsics {
        CameraIntrinsics { width: self.width, height: self.height, hfov: self.hfov }
    }

    pub fn limits(&self) -> Limits {
        Limits { v_max: self.v_max, omega_max: self.omega_max }
    }
}

#[derive(Clone, Debug)]
pub struct DemoRecord {
    pub image: Tensor,
    /// Expert command as issued, before clamping.
    pub command: VelocityCommand,
    /// Clamped command scaled into `[-1, 1]`.
    pub normalized: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct DemoDataset {
    pub manifest: DemoManifest,
    pub records: Vec<DemoRecord>,
}

impl DemoDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Expert that asks the simulator for the onboard view and logs every
/// `stride`-th tick with its unclamped command.
struct Recorder {
    expert: Expert,
    limits: Limits,
    stride: usize,
    tick: usize,
    rows: Vec<(Vec<u8>, VelocityCommand, [f64; 4])>,
}

impl Pilot for Recorder {
    fn needs_image(&self) -> bool {
        true
    }

    fn command(&mut self, obs: &Observation) -> Result<VelocityCommand> {
        let raw = self.expert.command(obs)?;
        if self.tick % self.stride == 0 {
            if let Some(img) = obs.image {
                let clamped = self.limits.clamp(raw);
                self.rows.push((to_rgb8(img), raw, self.limits.normalize(&clamped)));
            }
        }
        self.tick += 1;
        Ok(raw)
    }
}

struct Episode {
    amplitude: f64,
    completed: bool,
    rows: Vec<(Vec<u8>, VelocityCommand, [f64; 4])>,
}

fn run_episode(index: usize, cfg: &DemoConfig, rng: &Rng) -> Result<Episode> {
    let mut rng = rng.substream(index as u64);
    let amplitude = cfg.amplitudes[index % cfg.amplitudes.len()];
    let track = make_track(&mut rng, amplitude)?;
    let mut rcfg = cfg.rollout;
    rcfg.target_traversals = cfg.laps * GATE_COUNT;
    let mut pilot = Recorder { expert: Expert::new(cfg.pursuit), limits: rcfg.limits, stride: cfg.stride, tick: 0, rows: Vec::new() };
    let record = rollout(&mut pilot, &track, &rcfg, &mut rng, |_, _| {})?;
    Ok(Episode { amplitude, completed: record.termination == Termination::Completed, rows: pilot.rows })
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::dataset(format!("{}: {e}", path.display()))
}

/// Flies the expert on fresh random tracks until `cfg.records` records are
/// collected. Episode `e` draws its track, scene and offsets from
/// `rng.substream(e)`; episodes run in parallel batches and are kept in index
/// order, so the output depends only on the seed and settings. Episodes the
/// expert fails to complete are dropped and counted.
pub fn generate_demonstrations(cfg: &DemoConfig, rng: &Rng, out_dir: &Path) -> Result<DemoManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let paths: Vec<PathBuf> = [IMAGES_FILE, ACTIONS_FILE, MANIFEST_FILE].iter().map(|f| out_dir.join(f)).collect();
    let guard = PartialWrite::new(paths.clone());
    let mut images = std::io::BufWriter::new(fs::File::create(&paths[0]).map_err(|e| io_err(&paths[0], e))?);
    let mut actions = String::from(ACTIONS_HEADER);
    actions.push('\n');

    let batch = rayon::current_num_threads().max(4);
    let max_episodes = 100 * (cfg.records / 100 + 10);
    let (mut kept, mut discarded, mut next) = (Vec::new(), 0usize, 0usize);
    let mut stored = 0usize;
    while stored < cfg.records {
        if next >= max_episodes {
            return Err(Error::dataset(format!("expert completed too few episodes: {stored} of {} records after {next} episodes", cfg.records)));
        }
        let episodes: Vec<Result<Episode>> = (next..next + batch).into_par_iter().map(|e| run_episode(e, cfg, rng)).collect();
        next += batch;
        for ep in episodes {
            let ep = ep?;
            if !ep.completed {
                discarded += 1;
                continue;
            }
            if stored >= cfg.records {
                break;
            }
            kept.push(ep.amplitude);
            for (bytes, raw, norm) in ep.rows.into_iter().take(cfg.records - stored) {
                images.write_all(&bytes).map_err(|e| io_err(&paths[0], e))?;
                actions.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    raw.vx, raw.vy, raw.vz, raw.vpsi, norm[0], norm[1], norm[2], norm[3]
                ));
                stored += 1;
            }
        }
    }
    images.flush().map_err(|e| io_err(&paths[0], e))?;
    drop(images);
    fs::write(&paths[1], actions).map_err(|e| io_err(&paths[1], e))?;
    let cam = cfg.rollout.camera;
    let manifest = DemoManifest {
        format_version: DEMO_FORMAT_VERSION,
        kind: "demonstration".into(),
        episodes: kept.len(),
        ticks: stored,
        amplitudes: kept,
        seed: rng.seed(),
        stream: rng.stream(),
        v_max: cfg.rollout.limits.v_max,
        omega_max: cfg.rollout.limits.omega_max,
        discarded,
        height: cam.height,
        width: cam.width,
        hfov: cam.hfov,
    };
    write_manifest(&paths[2], &manifest)?;
    guard.commit();
    Ok(manifest)
}

pub fn read_demo_manifest(dir: &Path) -> Result<DemoManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let m: DemoManifest = serde_json::from_str(&text).map_err(|e| Error::dataset(format!("{}: {e}", path.display())))?;
    if m.format_version != DEMO_FORMAT_VERSION || m.kind != "demonstration" {
        return Err(Error::dataset(format!("{} is not a demonstration dataset", dir.display())));
    }
    Ok(m)
}

/// Loads a directory written by [`generate_demonstrations`].
pub fn load_demonstrations(dir: &Path) -> Result<DemoDataset> {
    let manifest = read_demo_manifest(dir)?;
    let cam = manifest.camera();
    cam.validate()?;
    let rec = 3 * cam.height * cam.width;
    let img_path = dir.join(IMAGES_FILE);
    let blob = fs::read(&img_path).map_err(|e| io_err(&img_path, e))?;
    if blob.len() != rec * manifest.ticks {
        return Err(Error::dataset(format!(
            "images.bin holds {} bytes but {} records need {}; record {} is incomplete",
            blob.len(),
            manifest.ticks,
            rec * manifest.ticks,
            blob.len() / rec
        )));
    }
    let act_path = dir.join(ACTIONS_FILE);
    let text = fs::read_to_string(&act_path).map_err(|e| io_err(&act_path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(ACTIONS_HEADER) {
        return Err(Error::dataset("actions.csv header mismatch"));
    }
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != manifest.ticks {
        return Err(Error::dataset(format!("actions.csv has {} records but the manifest lists {}", rows.len(), manifest.ticks)));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let v: Vec<f64> = row
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::dataset(format!("actions.csv record {i} has a bad number")))?;
        if v.len() != 8 {
            return Err(Error::dataset(format!("actions.csv record {i} has {} fields, expected 8", v.len())));
        }
        let normalized = [v[4], v[5], v[6], v[7]];
        if normalized.iter().any(|x| !x.is_finite() || x.abs() > 1.0 + 1e-9) {
            return Err(Error::dataset(format!("actions.csv record {i} has a normalized action outside [-1, 1]")));
        }
        records.push(DemoRecord {
            image: from_rgb8(&blob[i * rec..(i + 1) * rec], cam.height, cam.width),
            command: VelocityCommand { vx: v[0], vy: v[1], vz: v[2], vpsi: v[3] },
            normalized,
        });
    }
    Ok(DemoDataset { manifest, records })
}
