//! Alternating supervised/unsupervised training with per-pathway update
//! routing.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{arch, CmvaeModel, ModelVariant, IMAGE_DECODER, POSE_DECODER};
use crate::error::{Error, Result};
use crate::numerics::gaussian::standard_normal;
use crate::numerics::{adam_step, AdamConfig, Graph, Rng, Tensor, Var};
use crate::scene::{Dataset, LabeledSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Learning rate reached at the last step of a cosine schedule, as a
    /// fraction of `lr`.
    pub final_lr_fraction: f32,
    /// Weight of the per-sample KL divergence (summed over latent dims).
    pub beta: f32,
    /// Fraction of all steps over which β ramps linearly from 0.
    pub warmup_fraction: f32,
    pub image_weight: f32,
    pub pose_weight: f32,
    /// Share of batches that take the supervised (pose) pathway.
    pub supervised_fraction: f32,
    pub validation_fraction: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            final_lr_fraction: 0.05,
            beta: 1e-3,
            warmup_fraction: 0.1,
            image_weight: 1.0,
            pose_weight: 1.0,
            supervised_fraction: 0.5,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.beta, self.image_weight, self.pose_weight, self.warmup_fraction];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("loss weights and warm-up must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.supervised_fraction) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("supervised fraction must lie in [0, 1] and validation fraction in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::config("final learning-rate fraction must lie in [0, 1]"));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::config("batch size and learning rate must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Image reconstruction; updates the encoder and image decoder.
    Unsupervised,
    /// Pose regression; updates the encoder and pose decoder.
    Supervised,
}

/// Loss terms of one step or epoch; absent terms are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub image_mse: Option<f64>,
    pub pose_mse: Option<f64>,
    pub kl: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub train: LossReport,
    pub validation: LossReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CmvaeModel,
    pub curve: Vec<EpochLosses>,
    /// Epoch (1-based) whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
}

fn check_mode(variant: ModelVariant, mode: StepMode) -> Result<()> {
    match (variant, mode) {
        (ModelVariant::VanillaVae, StepMode::Supervised) => Err(Error::unsupported(variant, "supervised steps")),
        (ModelVariant::Regressor, StepMode::Unsupervised) => Err(Error::unsupported(variant, "unsupervised steps")),
        _ => Ok(()),
    }
}

/// Builds the loss graph for one batch. With `noise` the latent is sampled,
/// otherwise the latent mean is used.
fn build_loss(
    model: &CmvaeModel,
    g: &mut Graph,
    images: Tensor,
    poses: &[f32],
    mode: StepMode,
    cfg: &TrainConfig,
    noise: Option<&mut Rng>,
    train: bool,
) -> Result<(Var, LossReport)> {
    let x = g.input(images);
    let (mu, logvar) = model.encoder_outputs(g, x, train)?;
    let mut report = LossReport::default();
    let Some(logvar) = logvar else {
        let mse = g.mse(mu, poses)?;
        let loss = g.scale(mse, cfg.pose_weight)?;
        report.pose_mse = Some(g.value(mse).item() as f64);
        report.total = g.value(loss).item() as f64;
        return Ok((loss, report));
    };
    let z = match noise {
        Some(rng) => {
            let eps = standard_normal(g.value(mu).numel(), rng);
            g.reparameterize(mu, logvar, eps)?
        }
        None => mu,
    };
    let recon = match mode {
        StepMode::Unsupervised => {
            let img = arch::image_decoder_forward(g, &model.store, IMAGE_DECODER, &model.arch, z, train)?;
            let target = g.value(x).data().to_vec();
            let mse = g.mse(img, &target)?;
            report.image_mse = Some(g.value(mse).item() as f64);
            g.scale(mse, cfg.image_weight)?
        }
        StepMode::Supervised => {
            let y = arch::pose_decoder_forward(g, &model.store, POSE_DECODER, model.constrained(), z, train)?;
            let mse = g.mse(y, poses)?;
            report.pose_mse = Some(g.value(mse).item() as f64);
            g.scale(mse, cfg.pose_weight)?
        }
    };
    let kl = g.gaussian_kl(mu, logvar)?;
    report.kl = Some(g.value(kl).item() as f64);
    let weighted = g.scale(kl, cfg.beta)?;
    let loss = g.add(recon, weighted)?;
    report.total = g.value(loss).item() as f64;
    Ok((loss, report))
}

fn batch_tensors(model: &CmvaeModel, batch: &[&LabeledSample]) -> Result<(Tensor, Vec<f32>)> {
    let images = arch::stack_images(batch.iter().map(|s| &s.image), model.arch.height, model.arch.width)?;
    let poses = batch.iter().flat_map(|s| model.norm.normalize(&s.pose)).collect();
    Ok((images, poses))
}

/// One optimizer step on `batch`. Only the parameters on the active pathway
/// enter the graph, so only they receive gradients and updates.
pub fn train_step(model: &mut CmvaeModel, batch: &[&LabeledSample], mode: StepMode, cfg: &TrainConfig, rng: &mut Rng) -> Result<LossReport> {
    check_mode(model.variant, mode)?;
    if batch.is_empty() {
        return Err(Error::domain("empty training batch"));
    }
    let (images, poses) = batch_tensors(model, batch)?;
    let mut g = Graph::new();
    let (loss, report) = build_loss(model, &mut g, images, &poses, mode, cfg, Some(rng), true)?;
    g.backward(loss)?;
    model.store.zero_grad();
    g.export_param_grads(&mut model.store)?;
    adam_step(&mut model.store, &cfg.adam());
    Ok(report)
}

/// Loss of one batch evaluated at the latent mean, without updating the
/// model.
pub fn loss_at_mean(model: &CmvaeModel, batch: &[&LabeledSample], mode: StepMode, cfg: &TrainConfig) -> Result<LossReport> {
    check_mode(model.variant, mode)?;
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let (images, poses) = batch_tensors(model, batch)?;
    let mut g = Graph::new();
    Ok(build_loss(model, &mut g, images, &poses, mode, cfg, None, false)?.1)
}

fn modes_for(variant: ModelVariant) -> (bool, bool) {
    (variant.has_pose(), variant.has_image_decoder())
}

/// Learning rate after the given fraction of all steps.
pub fn cosine_lr(cfg: &TrainConfig, progress: f32) -> f32 {
    let f = cfg.final_lr_fraction;
    let c = 0.5 * (1.0 + (std::f32::consts::PI * progress.clamp(0.0, 1.0)).cos());
    cfg.lr * (f + (1.0 - f) * c)
}

/// Whether batch `k` takes the supervised pathway under fraction `f`.
fn supervised_at(k: usize, f: f32) -> bool {
    let f = f as f64;
    ((k + 1) as f64 * f).floor() > (k as f64 * f).floor()
}

/// Evaluates all applicable losses at the latent mean over `samples`.
pub fn evaluate_losses(model: &CmvaeModel, samples: &[&LabeledSample], cfg: &TrainConfig) -> Result<LossReport> {
    let (has_pose, has_img) = modes_for(model.variant);
    let mut sums = [0.0f64; 3];
    let mut n = 0usize;
    for chunk in samples.chunks(256) {
        let (images, poses) = batch_tensors(model, chunk)?;
        let w = chunk.len() as f64;
        if has_pose {
            let mut g = Graph::new();
            let (_, r) = build_loss(model, &mut g, images.clone(), &poses, StepMode::Supervised, cfg, None, false)?;
            sums[1] += r.pose_mse.unwrap_or(0.0) * w;
            sums[2] += r.kl.unwrap_or(0.0) * w;
        }
        if has_img {
            let mut g = Graph::new();
            let (_, r) = build_loss(model, &mut g, images, &poses, StepMode::Unsupervised, cfg, None, false)?;
            sums[0] += r.image_mse.unwrap_or(0.0) * w;
            if !has_pose {
                sums[2] += r.kl.unwrap_or(0.0) * w;
            }
        }
        n += chunk.len();
    }
    let nf = n.max(1) as f64;
    let mut out = LossReport {
        image_mse: has_img.then_some(sums[0] / nf),
        pose_mse: has_pose.then_some(sums[1] / nf),
        kl: model.variant.has_latent().then_some(sums[2] / nf),
        total: 0.0,
    };
    out.total = out.image_mse.unwrap_or(0.0) * cfg.image_weight as f64
        + out.pose_mse.unwrap_or(0.0) * cfg.pose_weight as f64
        + out.kl.unwrap_or(0.0) * cfg.beta as f64;
    Ok(out)
}

/// Splits a dataset into its leading training part and trailing validation
/// part.
pub fn split(dataset: &Dataset, validation_fraction: f32) -> (Vec<&LabeledSample>, Vec<&LabeledSample>) {
    let n = dataset.len();
    let n_val = ((n as f64) * validation_fraction as f64).round() as usize;
    let n_train = n - n_val.min(n);
    let all: Vec<&LabeledSample> = dataset.samples.iter().collect();
    (all[..n_train].to_vec(), all[n_train..].to_vec())
}

/// Full training run. Batches alternate between pathways according to the
/// supervised fraction; the returned model holds the parameters of the epoch
/// with the lowest validation objective.
pub fn train(model: CmvaeModel, dataset: &Dataset, cfg: &TrainConfig, mut progress: impl FnMut(&EpochLosses)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = split(dataset, cfg.validation_fraction);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model, curve: Vec::new(), best_epoch: 0 });
    }
    if train_set.len() < cfg.batch_size {
        return Err(Error::domain(format!(
            "training split has {} samples, fewer than the batch size {}",
            train_set.len(),
            cfg.batch_size
        )));
    }
    let (has_pose, has_img) = modes_for(model.variant);
    let frac = match (has_pose, has_img) {
        (true, true) => cfg.supervised_fraction,
        (true, false) => 1.0,
        _ => 0.0,
    };
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = (batches_per_epoch * cfg.epochs) as f32;
    let warmup_steps = cfg.warmup_fraction * total_steps;
    let mut order_rng = Rng::new(cfg.seed, 1);
    let mut noise_rng = Rng::new(cfg.seed, 2);
    let mut model = model;
    let mut best: Option<(f64, usize, CmvaeModel)> = None;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order = train_set.clone();
        order_rng.shuffle(&mut order);
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        for (k, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mode = if supervised_at(k, frac) { StepMode::Supervised } else { StepMode::Unsupervised };
            let mut step_cfg = *cfg;
            step_cfg.lr = cosine_lr(cfg, step as f32 / total_steps);
            if warmup_steps > 0.0 {
                step_cfg.beta = cfg.beta * (step as f32 / warmup_steps).min(1.0);
            }
            let report = train_step(&mut model, batch, mode, &step_cfg, &mut noise_rng).map_err(|e| match e {
                Error::NonFinite(what) => Error::Training { epoch, message: format!("non-finite value in {what}") },
                other => other,
            })?;
            if !report.total.is_finite() {
                return Err(Error::Training { epoch, message: "loss is not finite".into() });
            }
            for (slot, v) in [report.image_mse, report.pose_mse, report.kl].into_iter().enumerate() {
                if let Some(v) = v {
                    sums[slot] += v;
                    counts[slot] += 1;
                }
            }
            step += 1;
        }
        let mean = |i: usize| (counts[i] > 0).then(|| sums[i] / counts[i] as f64);
        let mut train_report = LossReport { image_mse: mean(0), pose_mse: mean(1), kl: mean(2), total: 0.0 };
        train_report.total = train_report.image_mse.unwrap_or(0.0) * cfg.image_weight as f64
            + train_report.pose_mse.unwrap_or(0.0) * cfg.pose_weight as f64
            + train_report.kl.unwrap_or(0.0) * cfg.beta as f64;
        let validation = if val_set.is_empty() { train_report } else { evaluate_losses(&model, &val_set, cfg)? };
        if !validation.total.is_finite() {
            return Err(Error::Training { epoch, message: "validation loss is not finite".into() });
        }
        let entry = EpochLosses { epoch, train: train_report, validation };
        progress(&entry);
        curve.push(entry);
        if best.as_ref().map_or(true, |(v, _, _)| validation.total < *v) {
            best = Some((validation.total, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, curve, best_epoch })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes `epoch,split,image_mse,pose_mse,kl` rows.
pub fn write_loss_csv(path: &Path, curve: &[EpochLosses]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,split,image_mse,pose_mse,kl")?;
    for e in curve {
        for (name, r) in [("train", &e.train), ("validation", &e.validation)] {
            writeln!(out, "{},{name},{},{},{}", e.epoch, fmt_opt(r.image_mse), fmt_opt(r.pose_mse), fmt_opt(r.kl))?;
        }
    }
    out.flush()?;
    Ok(())
}
