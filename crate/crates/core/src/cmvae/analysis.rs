//! Pose-error statistics and latent-space exploration.

use serde::Serialize;

use super::CmvaeModel;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scene::{wrap_angle, LabeledSample, RelativeGatePose};

/// Mean absolute error and its standard error per component. Distances are
/// in meters, angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoseErrorReport {
    pub n: usize,
    pub mae: [f64; 4],
    pub sem: [f64; 4],
}

impl PoseErrorReport {
    pub const COMPONENTS: [&'static str; 4] = ["r", "theta", "phi", "psi"];

    /// Statistics of `|prediction − truth|` with angular differences wrapped.
    pub fn from_pairs(pairs: &[(RelativeGatePose, RelativeGatePose)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::domain("pose error over an empty dataset"));
        }
        let n = pairs.len() as f64;
        let errs: Vec<[f64; 4]> = pairs
            .iter()
            .map(|(p, t)| {
                [
                    (p.r - t.r).abs(),
                    wrap_angle(p.theta - t.theta).abs().to_degrees(),
                    (p.phi - t.phi).abs().to_degrees(),
                    wrap_angle(p.psi - t.psi).abs().to_degrees(),
                ]
            })
            .collect();
        let mut mae = [0.0; 4];
        let mut sem = [0.0; 4];
        for k in 0..4 {
            let m = errs.iter().map(|e| e[k]).sum::<f64>() / n;
            let var = if pairs.len() > 1 { errs.iter().map(|e| (e[k] - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            mae[k] = m;
            sem[k] = (var / n).sqrt();
        }
        Ok(Self { n: pairs.len(), mae, sem })
    }
}

/// Pose error of the model's predictions (at the latent mean) on `samples`.
pub fn evaluate_pose_error(model: &CmvaeModel, samples: &[&LabeledSample]) -> Result<PoseErrorReport> {
    if samples.is_empty() {
        return Err(Error::domain("pose error over an empty dataset"));
    }
    let mut pairs = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let images = super::stack_images(chunk.iter().map(|s| &s.image), model.arch.height, model.arch.width)?;
        let preds = model.predict_poses(&images)?;
        pairs.extend(preds.into_iter().zip(chunk.iter().map(|s| s.pose)));
    }
    PoseErrorReport::from_pairs(&pairs)
}

#[derive(Clone, Debug)]
pub struct InterpolationStep {
    pub t: f64,
    pub z: Vec<f32>,
    pub image: Tensor,
    pub pose: Option<RelativeGatePose>,
}

/// Decodes `steps` evenly spaced points on the segment between the latent
/// means of two images.
pub fn interpolate(model: &CmvaeModel, a: &Tensor, b: &Tensor, steps: usize) -> Result<Vec<InterpolationStep>> {
    if steps < 2 {
        return Err(Error::domain("interpolation needs at least two steps"));
    }
    let za = model.encode(a)?;
    let zb = model.encode(b)?;
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = i as f64 / (steps - 1) as f64;
        let tf = t as f32;
        let z: Vec<f32> = za.mu().iter().zip(zb.mu()).map(|(&x, &y)| (1.0 - tf) * x + tf * y).collect();
        let image = model.decode_image(&z)?;
        let pose = if model.variant.has_pose() { Some(model.decode_pose(&z)?) } else { None };
        out.push(InterpolationStep { t, z, image, pose });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Traversal {
    pub values: Vec<f32>,
    pub images: Vec<Tensor>,
    pub poses: Vec<Option<RelativeGatePose>>,
    /// All decoded images side by side, `3×H×(steps·W)`.
    pub mosaic: Tensor,
}

/// Sweeps latent dimension `dim` over `μ[dim] ± span` with the other
/// dimensions held at the mean of `base`.
pub fn latent_traversal(model: &CmvaeModel, base: &Tensor, dim: usize, span: f32, steps: usize) -> Result<Traversal> {
    if dim >= model.arch.latent {
        return Err(Error::domain(format!("latent dimension {dim} out of range for size {}", model.arch.latent)));
    }
    if steps < 1 {
        return Err(Error::domain("traversal needs at least one step"));
    }
    let mu = model.encode(base)?.mu().to_vec();
    let mut values = Vec::with_capacity(steps);
    let mut images = Vec::with_capacity(steps);
    let mut poses = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = if steps == 1 { 0.0 } else { -1.0 + 2.0 * i as f32 / (steps - 1) as f32 };
        let mut z = mu.clone();
        z[dim] = mu[dim] + t * span;
        values.push(z[dim]);
        images.push(model.decode_image(&z)?);
        poses.push(if model.variant.has_pose() { Some(model.decode_pose(&z)?) } else { None });
    }
    let mosaic = tile_horizontal(&images)?;
    Ok(Traversal { values, images, poses, mosaic })
}

/// Places CHW images of equal size left to right.
pub fn tile_horizontal(images: &[Tensor]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::domain("nothing to tile"))?;
    let (c, h, w) = (first.shape()[0], first.shape()[1], first.shape()[2]);
    let total_w = w * images.len();
    let mut data = vec![0.0f32; c * h * total_w];
    for (k, img) in images.iter().enumerate() {
        if img.shape() != first.shape() {
            return Err(Error::domain("tiled images differ in shape"));
        }
        for ch in 0..c {
            for i in 0..h {
                let src = &img.data()[(ch * h + i) * w..(ch * h + i + 1) * w];
                let dst = (ch * h + i) * total_w + k * w;
                data[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Tensor::new(&[c, h, total_w], data)
}
