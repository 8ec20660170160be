use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Policy;
use crate::cmvae::arch::stack_images;
use crate::error::{Error, Result};
use crate::expert::{DemoDataset, DemoRecord};
use crate::numerics::{adam_step, AdamConfig, Graph, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub validation_fraction: f32,
    pub seed: u64,
}

impl Default for BcTrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 64, lr: 1e-3, validation_fraction: 0.2, seed: 0 }
    }
}

impl BcTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("batch size and learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BcEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
}

#[derive(Clone, Debug)]
pub struct BcOutcome {
    pub policy: Policy,
    pub curve: Vec<BcEpoch>,
    /// Epoch (1-based) whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
}

/// Either precomputed head inputs (frozen features) or raw images.
enum Inputs<'a> {
    Features(Vec<f32>),
    Images(&'a [DemoRecord]),
}

fn targets(records: &[&DemoRecord]) -> Vec<f32> {
    records.iter().flat_map(|r| r.normalized.map(|v| v as f32)).collect()
}

fn batch_input(policy: &Policy, g: &mut Graph, inputs: &Inputs, idx: &[usize], train: bool) -> Result<crate::numerics::Var> {
    match inputs {
        Inputs::Features(f) => {
            let w = policy.input;
            let data: Vec<f32> = idx.iter().flat_map(|&i| f[i * w..(i + 1) * w].iter().copied()).collect();
            Ok(g.input(Tensor::new(&[idx.len(), w], data)?))
        }
        Inputs::Images(recs) => {
            let images = stack_images(idx.iter().map(|&i| &recs[i].image), policy.arch.height, policy.arch.width)?;
            policy.input_node(g, &images, train)
        }
    }
}

fn mse_over(policy: &Policy, inputs: &Inputs, records: &[DemoRecord], idx: &[usize]) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in idx.chunks(256) {
        let mut g = Graph::new();
        let x = batch_input(policy, &mut g, inputs, chunk, false)?;
        let y = policy.head_node(&mut g, x, false)?;
        let t = targets(&chunk.iter().map(|&i| &records[i]).collect::<Vec<_>>());
        let mse = g.mse(y, &t)?;
        sum += g.value(mse).item() as f64 * chunk.len() as f64;
    }
    Ok(sum / idx.len().max(1) as f64)
}

fn prepare<'a>(policy: &Policy, records: &'a [DemoRecord]) -> Result<Inputs<'a>> {
    if policy.features.is_none() {
        return Ok(Inputs::Images(records));
    }
    let mut out = Vec::with_capacity(records.len() * policy.input);
    for chunk in records.chunks(256) {
        let images = stack_images(chunk.iter().map(|r| &r.image), policy.arch.height, policy.arch.width)?;
        out.extend(policy.featurize(&images)?);
    }
    Ok(Inputs::Features(out))
}

/// Mean squared error between the policy's normalized actions and the
/// stored normalized expert commands.
pub fn evaluate_mse(policy: &Policy, records: &[DemoRecord]) -> Result<f64> {
    let inputs = prepare(policy, records)?;
    let idx: Vec<usize> = (0..records.len()).collect();
    mse_over(policy, &inputs, records, &idx)
}

/// Behavior cloning on the leading part of `demos`, validated on the
/// trailing part. Feature-based variants never touch their feature model;
/// the end-to-end variant updates its encoder together with the head. The
/// returned policy holds the parameters of the best validation epoch.
pub fn bc_train(policy: Policy, demos: &DemoDataset, cfg: &BcTrainConfig, mut progress: impl FnMut(&BcEpoch)) -> Result<BcOutcome> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::dataset("demonstration set is empty"));
    }
    let m = &demos.manifest;
    if (m.height, m.width) != (policy.arch.height, policy.arch.width) {
        return Err(Error::config(format!(
            "demonstration images are {}×{} but the policy expects {}×{}",
            m.height, m.width, policy.arch.height, policy.arch.width
        )));
    }
    let n = demos.len();
    let n_val = ((n as f64) * cfg.validation_fraction as f64).round() as usize;
    let n_train = n - n_val.min(n);
    if n_train == 0 {
        return Err(Error::domain("no demonstration records left for training"));
    }
    if cfg.epochs == 0 {
        return Ok(BcOutcome { policy, curve: Vec::new(), best_epoch: 0 });
    }
    let train_idx: Vec<usize> = (0..n_train).collect();
    let val_idx: Vec<usize> = (n_train..n).collect();
    let records = &demos.records[..];
    let mut policy = policy;
    let inputs = prepare(&policy, records)?;
    let train_encoder = policy.features.is_none();
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut order_rng = Rng::new(cfg.seed, 3);
    let mut best: Option<(f64, usize, Policy)> = None;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order_rng.shuffle(&mut order);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let x = batch_input(&policy, &mut g, &inputs, batch, train_encoder)?;
            let y = policy.head_node(&mut g, x, true)?;
            let t = targets(&batch.iter().map(|&i| &records[i]).collect::<Vec<_>>());
            let loss = g.mse(y, &t)?;
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::Training { epoch, message: "behavior-cloning loss is not finite".into() });
            }
            g.backward(loss)?;
            policy.store.zero_grad();
            g.export_param_grads(&mut policy.store)?;
            adam_step(&mut policy.store, &adam);
            sum += value * batch.len() as f64;
        }
        let train_mse = sum / n_train as f64;
        let validation_mse = if val_idx.is_empty() { train_mse } else { mse_over(&policy, &inputs, records, &val_idx)? };
        if !validation_mse.is_finite() {
            return Err(Error::Training { epoch, message: "validation loss is not finite".into() });
        }
        let entry = BcEpoch { epoch, train_mse, validation_mse };
        progress(&entry);
        curve.push(entry);
        if best.as_ref().map_or(true, |(v, _, _)| validation_mse < *v) {
            best = Some((validation_mse, epoch, policy.clone()));
        }
    }
    let (_, best_epoch, policy) = best.expect("at least one epoch ran");
    Ok(BcOutcome { policy, curve, best_epoch })
}

/// Writes `epoch,train_mse,validation_mse` rows.
pub fn write_bc_loss_csv(path: &Path, curve: &[BcEpoch]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,train_mse,validation_mse")?;
    for e in curve {
        writeln!(out, "{},{},{}", e.epoch, e.train_mse, e.validation_mse)?;
    }
    out.flush()?;
    Ok(())
}
