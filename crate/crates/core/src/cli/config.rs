//! Flat experiment configuration. Values resolve in the order: built-in
//! defaults, config file, environment (`VISUOMOTOR_SEED`, `VISUOMOTOR_OUT`),
//! then `--set key=value` flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cmvae::{ArchConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::expert::{DemoConfig, PursuitConfig};
use crate::policy::{BcTrainConfig, HeadConfig};
use crate::scene::{CameraIntrinsics, PoseRanges, Range, SceneParams};
use crate::simulator::{Limits, RolloutConfig, GATE_COUNT};

pub const ENV_SEED: &str = "VISUOMOTOR_SEED";
pub const ENV_OUT: &str = "VISUOMOTOR_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    /// Root of all outputs.
    pub out_dir: PathBuf,
    /// Worker threads for generation and evaluation; 0 uses every core.
    pub threads: usize,

    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,

    pub gate_side: f64,
    pub bar_thickness: f64,
    pub bar_depth: f64,
    pub samples_per_axis: usize,
    pub gate_jitter: f64,
    pub ground_jitter: f64,
    pub sky_jitter: f64,

    /// Sampled relative gate poses: distance, azimuth half-range, polar band
    /// around the horizon, relative yaw half-range.
    pub r_min: f64,
    pub r_max: f64,
    pub azimuth_max_deg: f64,
    pub polar_band_deg: f64,
    pub yaw_max_deg: f64,
    pub roll_max_deg: f64,
    pub pitch_max_deg: f64,

    pub n_samples: usize,

    pub latent: usize,
    pub channels: [usize; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub final_lr_fraction: f32,
    pub beta: f32,
    pub warmup_fraction: f32,
    pub image_weight: f32,
    pub pose_weight: f32,
    pub supervised_fraction: f32,
    pub validation_fraction: f32,

    pub lookahead: f64,
    pub v_nominal: f64,
    pub yaw_gain: f64,
    pub v_cross: f64,

    pub demo_records: usize,
    pub demo_laps: usize,
    pub demo_amplitudes: Vec<f64>,
    pub demo_stride: usize,

    pub head_hidden: [usize; 2],
    pub bc_epochs: usize,
    pub bc_batch_size: usize,
    pub bc_lr: f32,
    pub bc_validation_fraction: f32,

    pub v_max: f64,
    pub omega_max: f64,
    pub dt: f64,
    pub tau: f64,
    pub max_ticks: usize,
    pub laps: usize,
    pub missed_overshoot: f64,

    pub eval_amplitudes: Vec<f64>,
    pub trials: usize,
    pub interp_steps: usize,
    pub traverse_steps: usize,
    /// Traversal half-span in standard deviations of the latent mean over
    /// validation images.
    pub traverse_sigmas: f32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scene = SceneParams::default();
        let ranges = PoseRanges::for_hfov(std::f64::consts::FRAC_PI_2);
        let train = TrainConfig::default();
        let arch = ArchConfig::default();
        let bc = BcTrainConfig::default();
        let pursuit = PursuitConfig::default();
        let rollout = RolloutConfig::default();
        let demo = DemoConfig::default();
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            threads: 0,
            width: arch.width,
            height: arch.height,
            hfov_deg: 90.0,
            gate_side: scene.gate_side,
            bar_thickness: scene.bar_thickness,
            bar_depth: scene.bar_depth,
            samples_per_axis: scene.samples_per_axis,
            gate_jitter: scene.gate_jitter,
            ground_jitter: scene.ground_jitter,
            sky_jitter: scene.sky_jitter,
            r_min: ranges.r.min,
            r_max: ranges.r.max,
            azimuth_max_deg: ranges.theta.max.to_degrees(),
            polar_band_deg: (ranges.phi.max - std::f64::consts::FRAC_PI_2).to_degrees(),
            yaw_max_deg: ranges.psi.max.to_degrees(),
            roll_max_deg: ranges.roll.max.to_degrees(),
            pitch_max_deg: ranges.pitch.max.to_degrees(),
            n_samples: 20_000,
            latent: arch.latent,
            channels: arch.channels,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            final_lr_fraction: train.final_lr_fraction,
            beta: train.beta,
            warmup_fraction: train.warmup_fraction,
            image_weight: train.image_weight,
            pose_weight: train.pose_weight,
            supervised_fraction: train.supervised_fraction,
            validation_fraction: train.validation_fraction,
            lookahead: pursuit.lookahead,
            v_nominal: pursuit.v_nominal,
            yaw_gain: pursuit.yaw_gain,
            v_cross: pursuit.v_cross,
            demo_records: demo.records,
            demo_laps: demo.laps,
            demo_amplitudes: demo.amplitudes,
            demo_stride: demo.stride,
            head_hidden: HeadConfig::default().hidden,
            bc_epochs: bc.epochs,
            bc_batch_size: bc.batch_size,
            bc_lr: bc.lr,
            bc_validation_fraction: bc.validation_fraction,
            v_max: rollout.limits.v_max,
            omega_max: rollout.limits.omega_max,
            dt: rollout.dt,
            tau: rollout.tau,
            max_ticks: rollout.max_ticks,
            laps: rollout.target_traversals / GATE_COUNT,
            missed_overshoot: rollout.missed_overshoot,
            eval_amplitudes: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            trials: 10,
            interp_steps: 10,
            traverse_steps: 9,
            traverse_sigmas: 2.0,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    /// Resolves the configuration from an optional file, the environment and
    /// `key=value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String], env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut table = toml::Table::try_from(Self::default()).map_err(|e| Error::config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
            let user: toml::Table = text.parse().map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            for (k, v) in user {
                table.insert(k, v);
            }
        }
        if let Some(seed) = env(ENV_SEED) {
            let seed: u64 = seed.trim().parse().map_err(|_| Error::config(format!("{ENV_SEED} must be an unsigned integer, got `{seed}`")))?;
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if let Some(out) = env(ENV_OUT) {
            table.insert("out_dir".into(), toml::Value::String(out));
        }
        for item in overrides {
            let (k, v) = item.split_once('=').ok_or_else(|| Error::config(format!("override `{item}` is not of the form key=value")))?;
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera().validate()?;
        self.scene().validate()?;
        self.ranges().validate()?;
        self.arch().validate()?;
        self.train().validate()?;
        self.bc().validate()?;
        self.demo().validate()?;
        if self.width != self.height {
            return Err(Error::config("images must be square"));
        }
        if !(self.dt > 0.0) || self.max_ticks == 0 || self.laps == 0 || self.trials == 0 {
            return Err(Error::config("dt, max_ticks, laps and trials must be positive"));
        }
        if !(self.v_max > 0.0 && self.omega_max > 0.0) {
            return Err(Error::config("velocity limits must be positive"));
        }
        if self.eval_amplitudes.is_empty() || self.eval_amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::config("eval_amplitudes must be a non-empty list of non-negative values"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn camera(&self) -> CameraIntrinsics {
        CameraIntrinsics { width: self.width, height: self.height, hfov: self.hfov_deg.to_radians() }
    }

    pub fn scene(&self) -> SceneParams {
        SceneParams {
            gate_side: self.gate_side,
            bar_thickness: self.bar_thickness,
            bar_depth: self.bar_depth,
            samples_per_axis: self.samples_per_axis,
            gate_jitter: self.gate_jitter,
            ground_jitter: self.ground_jitter,
            sky_jitter: self.sky_jitter,
            ..SceneParams::default()
        }
    }

    pub fn ranges(&self) -> PoseRanges {
        let sym = |d: f64| Range::new(-d.to_radians(), d.to_radians());
        let h = std::f64::consts::FRAC_PI_2;
        let band = self.polar_band_deg.to_radians();
        PoseRanges {
            r: Range::new(self.r_min, self.r_max),
            theta: sym(self.azimuth_max_deg),
            phi: Range::new(h - band, h + band),
            psi: sym(self.yaw_max_deg),
            roll: sym(self.roll_max_deg),
            pitch: sym(self.pitch_max_deg),
        }
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig { latent: self.latent, channels: self.channels, height: self.height, width: self.width }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            final_lr_fraction: self.final_lr_fraction,
            beta: self.beta,
            warmup_fraction: self.warmup_fraction,
            image_weight: self.image_weight,
            pose_weight: self.pose_weight,
            supervised_fraction: self.supervised_fraction,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }

    pub fn limits(&self) -> Limits {
        Limits { v_max: self.v_max, omega_max: self.omega_max }
    }

    pub fn pursuit(&self) -> PursuitConfig {
        PursuitConfig { lookahead: self.lookahead, v_nominal: self.v_nominal, yaw_gain: self.yaw_gain, v_cross: self.v_cross, limits: self.limits() }
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            dt: self.dt,
            max_ticks: self.max_ticks,
            tau: self.tau,
            target_traversals: self.laps * GATE_COUNT,
            missed_overshoot: self.missed_overshoot,
            limits: self.limits(),
            camera: self.camera(),
            scene: self.scene(),
        }
    }

    pub fn demo(&self) -> DemoConfig {
        DemoConfig {
            records: self.demo_records,
            laps: self.demo_laps,
            amplitudes: self.demo_amplitudes.clone(),
            stride: self.demo_stride,
            pursuit: self.pursuit(),
            rollout: self.rollout(),
        }
    }

    pub fn head(&self) -> HeadConfig {
        HeadConfig { hidden: self.head_hidden }
    }

    pub fn bc(&self) -> BcTrainConfig {
        BcTrainConfig {
            epochs: self.bc_epochs,
            batch_size: self.bc_batch_size,
            lr: self.bc_lr,
            validation_fraction: self.bc_validation_fraction,
            seed: self.seed,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn demos_dir(&self) -> PathBuf {
        self.out_dir.join("demos")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn policies_dir(&self) -> PathBuf {
        self.out_dir.join("policies")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }
}
