//! Command-line front end: `gen-data`, `train` and `eval`.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use config::ExperimentConfig;

use crate::cmvae::{self, evaluate_pose_error, interpolate, latent_traversal, stack_images, tile_horizontal, CmvaeModel, ModelVariant};
use crate::error::{Error, Result};
use crate::expert::{generate_demonstrations, load_demonstrations, Expert};
use crate::numerics::{Rng, Tensor};
use crate::policy::{bc_train, write_bc_loss_csv, Policy, PolicyVariant};
use crate::scene::{generate_dataset, load_dataset, write_ppm, RelativeGatePose};
use crate::simulator::{evaluate_success, write_success_csv, write_success_svg, SuccessCurve};

#[derive(Debug, Parser)]
#[command(name = "visuomotor", version, about = "Cross-modal representations and behavior-cloned gate-racing policies")]
pub struct Cli {
    /// Flat TOML configuration file.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads for generation and evaluation (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Representation,
    Demos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    CmvaeCon,
    CmvaeUnc,
    Vae,
    Regressor,
}

impl ModelArg {
    pub fn variant(self) -> ModelVariant {
        match self {
            ModelArg::CmvaeCon => ModelVariant::CmvaeConstrained,
            ModelArg::CmvaeUnc => ModelVariant::CmvaeUnconstrained,
            ModelArg::Vae => ModelVariant::VanillaVae,
            ModelArg::Regressor => ModelVariant::Regressor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Con,
    Unc,
    Img,
    Reg,
    Full,
    /// The planner/tracker itself (evaluation only).
    Expert,
}

impl PolicyArg {
    pub fn variant(self) -> Option<PolicyVariant> {
        match self {
            PolicyArg::Con => Some(PolicyVariant::BcCon),
            PolicyArg::Unc => Some(PolicyVariant::BcUnc),
            PolicyArg::Img => Some(PolicyVariant::BcImg),
            PolicyArg::Reg => Some(PolicyVariant::BcReg),
            PolicyArg::Full => Some(PolicyVariant::BcFull),
            PolicyArg::Expert => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalWhat {
    PoseError,
    SuccessCurve,
    Interpolate,
    Traverse,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labeled image dataset or record expert demonstrations.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        /// Number of samples (representation) or records (demos).
        #[arg(long)]
        n: Option<usize>,
        /// Output directory; defaults to `<out_dir>/data` or `<out_dir>/demos`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a representation model or a behavior-cloning policy.
    Train {
        #[arg(long, value_enum, conflicts_with = "policy", required_unless_present = "policy")]
        model: Option<ModelArg>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Pose-error table, success curves, latent interpolation or traversal.
    Eval {
        #[arg(long, value_enum)]
        what: EvalWhat,
        /// Representation models to evaluate (pose_error, interpolate, traverse).
        #[arg(long, value_enum, value_delimiter = ',')]
        model: Vec<ModelArg>,
        /// Pilots for the success curve; defaults to all five policies and the expert.
        #[arg(long, value_enum, value_delimiter = ',')]
        policy: Vec<PolicyArg>,
        /// Episodes per amplitude for the success curve.
        #[arg(long)]
        trials: Option<usize>,
        /// Gate offset amplitudes in meters, e.g. `0,1,2,3`.
        #[arg(long, value_delimiter = ',')]
        amplitudes: Option<Vec<f64>>,
        /// Latent dimension to sweep.
        #[arg(long, default_value_t = 0)]
        dim: usize,
        /// Validation-split indices of the two interpolation endpoints.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1])]
        pair: Vec<usize>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.to_string())),
    };
    execute(cli, |k| std::env::var(k).ok())
}

pub fn execute(cli: Cli, env: impl Fn(&str) -> Option<String>) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(t) = cli.threads {
        overrides.push(format!("threads={t}"));
    }
    match &cli.command {
        Command::GenData { n: Some(n), kind, .. } => {
            let key = if *kind == DataKind::Representation { "n_samples" } else { "demo_records" };
            overrides.push(format!("{key}={n}"));
        }
        Command::Train { epochs: Some(e), model, .. } => {
            let key = if model.is_some() { "epochs" } else { "bc_epochs" };
            overrides.push(format!("{key}={e}"));
        }
        Command::Eval { trials, amplitudes, .. } => {
            if let Some(t) = trials {
                overrides.push(format!("trials={t}"));
            }
            if let Some(a) = amplitudes {
                let list: Vec<String> = a.iter().map(|v| format!("{v:?}")).collect();
                overrides.push(format!("eval_amplitudes=[{}]", list.join(",")));
            }
        }
        _ => {}
    }
    let cfg = ExperimentConfig::resolve(cli.config.as_deref(), &overrides, env)?;
    if cfg.threads > 0 {
        // Ignore the error when a pool already exists (repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let line = command_line(&cli.command);
    match cli.command {
        Command::GenData { kind, out, .. } => gen_data(&cfg, kind, out, &line),
        Command::Train { model: Some(m), .. } => train_model(&cfg, m.variant(), &line),
        Command::Train { policy: Some(p), .. } => {
            let v = p.variant().ok_or_else(|| Error::Usage("the expert is not trained".into()))?;
            train_policy(&cfg, v, &line)
        }
        Command::Train { .. } => Err(Error::Usage("train needs --model or --policy".into())),
        Command::Eval { what, model, policy, dim, pair, .. } => match what {
            EvalWhat::PoseError => eval_pose_error(&cfg, &model, &line),
            EvalWhat::SuccessCurve => eval_success(&cfg, &policy, &line),
            EvalWhat::Interpolate => eval_interpolate(&cfg, &model, &pair, &line),
            EvalWhat::Traverse => eval_traverse(&cfg, &model, dim, &line),
        },
    }
}

fn command_line(cmd: &Command) -> String {
    format!("{cmd:?}")
}

/// Writes the resolved configuration, headed by the command it served.
fn write_resolved(cfg: &ExperimentConfig, path: &Path, line: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format!("# {line}\n{}", cfg.to_toml()?))?;
    Ok(())
}

pub fn model_path(cfg: &ExperimentConfig, v: ModelVariant) -> PathBuf {
    cfg.models_dir().join(format!("{}.ckpt", v.tag()))
}

pub fn policy_path(cfg: &ExperimentConfig, v: PolicyVariant) -> PathBuf {
    cfg.policies_dir().join(format!("{}.ckpt", v.tag()))
}

fn require(path: &Path, what: &str, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::config(format!("{what} not found at {}; {hint}", path.display())))
    }
}

fn load_model(cfg: &ExperimentConfig, v: ModelVariant) -> Result<CmvaeModel> {
    let path = model_path(cfg, v);
    let arg = match v {
        ModelVariant::CmvaeConstrained => "cmvae-con",
        ModelVariant::CmvaeUnconstrained => "cmvae-unc",
        ModelVariant::VanillaVae => "vae",
        ModelVariant::Regressor => "regressor",
    };
    require(&path, &format!("{v} checkpoint"), &format!("run `visuomotor train --model {arg}` first"))?;
    CmvaeModel::load(&path)
}

fn gen_data(cfg: &ExperimentConfig, kind: DataKind, out: Option<PathBuf>, line: &str) -> Result<()> {
    match kind {
        DataKind::Representation => {
            let dir = out.unwrap_or_else(|| cfg.data_dir());
            let m = generate_dataset(cfg.n_samples, &Rng::new(cfg.seed, 0), &cfg.camera(), &cfg.scene(), &cfg.ranges(), &dir)?;
            write_resolved(cfg, &dir.join("resolved_config.toml"), line)?;
            println!("wrote {} samples to {}", m.n, dir.display());
        }
        DataKind::Demos => {
            let dir = out.unwrap_or_else(|| cfg.demos_dir());
            let m = generate_demonstrations(&cfg.demo(), &Rng::new(cfg.seed, 1), &dir)?;
            write_resolved(cfg, &dir.join("resolved_config.toml"), line)?;
            println!("wrote {} records from {} episodes ({} discarded) to {}", m.ticks, m.episodes, m.discarded, dir.display());
        }
    }
    Ok(())
}

fn train_model(cfg: &ExperimentConfig, v: ModelVariant, line: &str) -> Result<()> {
    let data = cfg.data_dir();
    require(&data.join("manifest.json"), "representation dataset", "run `visuomotor gen-data --kind representation` first")?;
    let ds = load_dataset(&data)?;
    let mut rng = Rng::new(cfg.seed, 10 + ModelVariant::ALL.iter().position(|&m| m == v).unwrap_or(0) as u64);
    let model = CmvaeModel::new(v, cfg.arch(), &ds.manifest.ranges, &mut rng)?;
    let out = cmvae::train(model, &ds, &cfg.train(), |e| {
        eprintln!(
            "epoch {:>3}  train {:.5}  validation {:.5}",
            e.epoch, e.train.total, e.validation.total
        )
    })?;
    let dir = cfg.models_dir();
    fs::create_dir_all(&dir)?;
    out.model.save(&model_path(cfg, v))?;
    cmvae::write_loss_csv(&dir.join(format!("{}_loss.csv", v.tag())), &out.curve)?;
    write_resolved(cfg, &dir.join(format!("{}.resolved.toml", v.tag())), line)?;
    println!("kept epoch {} of {}; checkpoint {}", out.best_epoch, out.curve.len(), model_path(cfg, v).display());
    Ok(())
}

fn load_policy(cfg: &ExperimentConfig, v: PolicyVariant) -> Result<Policy> {
    let path = policy_path(cfg, v);
    let arg = v.tag().trim_start_matches("BC_");
    require(&path, &format!("{v} checkpoint"), &format!("run `visuomotor train --policy {arg}` first"))?;
    let features = v.feature_variant().map(|m| load_model(cfg, m)).transpose()?;
    Policy::load(&path, features)
}

fn train_policy(cfg: &ExperimentConfig, v: PolicyVariant, line: &str) -> Result<()> {
    let features = v.feature_variant().map(|m| load_model(cfg, m)).transpose()?;
    let demos_dir = cfg.demos_dir();
    require(&demos_dir.join("manifest.json"), "demonstration dataset", "run `visuomotor gen-data --kind demos` first")?;
    let demos = load_demonstrations(&demos_dir)?;
    let code = PolicyVariant::ALL.iter().position(|&p| p == v).unwrap_or(0) as u64;
    let policy = Policy::new(v, features, cfg.arch(), cfg.head(), demos.manifest.limits(), &mut Rng::new(cfg.seed, 20 + code))?;
    let out = bc_train(policy, &demos, &cfg.bc(), |e| {
        if e.epoch == 1 || e.epoch % 10 == 0 {
            eprintln!("epoch {:>3}  train {:.5}  validation {:.5}", e.epoch, e.train_mse, e.validation_mse)
        }
    })?;
    let dir = cfg.policies_dir();
    fs::create_dir_all(&dir)?;
    out.policy.save(&policy_path(cfg, v))?;
    write_bc_loss_csv(&dir.join(format!("{}_loss.csv", v.tag())), &out.curve)?;
    write_resolved(cfg, &dir.join(format!("{}.resolved.toml", v.tag())), line)?;
    println!("kept epoch {} of {}; checkpoint {}", out.best_epoch, out.curve.len(), policy_path(cfg, v).display());
    Ok(())
}

fn validation_samples(cfg: &ExperimentConfig) -> Result<crate::scene::Dataset> {
    let data = cfg.data_dir();
    require(&data.join("manifest.json"), "representation dataset", "run `visuomotor gen-data --kind representation` first")?;
    let mut ds = load_dataset(&data)?;
    let n = ds.len();
    let n_val = ((n as f64) * cfg.validation_fraction as f64).round() as usize;
    ds.samples.drain(..n - n_val.min(n));
    Ok(ds)
}

fn models_or(list: &[ModelArg], default: &[ModelArg]) -> Vec<ModelVariant> {
    let l = if list.is_empty() { default } else { list };
    l.iter().map(|m| m.variant()).collect()
}

/// Writes `model,n,radius_m,radius_se,azimuth_deg,azimuth_se,polar_deg,polar_se,yaw_deg,yaw_se`.
fn eval_pose_error(cfg: &ExperimentConfig, models: &[ModelArg], line: &str) -> Result<()> {
    let val = validation_samples(cfg)?;
    let refs: Vec<_> = val.samples.iter().collect();
    let mut csv = String::from("model,n,radius_m,radius_se,azimuth_deg,azimuth_se,polar_deg,polar_se,yaw_deg,yaw_se\n");
    println!("{:<22} {:>16} {:>16} {:>16} {:>16}", "model", "radius [m]", "azimuth [deg]", "polar [deg]", "yaw [deg]");
    for v in models_or(models, &[ModelArg::Regressor, ModelArg::CmvaeUnc, ModelArg::CmvaeCon]) {
        let model = load_model(cfg, v)?;
        let rep = evaluate_pose_error(&model, &refs)?;
        let _ = write!(csv, "{},{}", v.tag(), rep.n);
        for k in 0..4 {
            let _ = write!(csv, ",{},{}", rep.mae[k], rep.sem[k]);
        }
        csv.push('\n');
        let cell = |k: usize| format!("{:.3} ± {:.3}", rep.mae[k], rep.sem[k]);
        println!("{:<22} {:>16} {:>16} {:>16} {:>16}", v.tag(), cell(0), cell(1), cell(2), cell(3));
    }
    let dir = cfg.eval_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("pose_error.csv"), csv)?;
    write_resolved(cfg, &dir.join("pose_error.resolved.toml"), line)
}

fn eval_success(cfg: &ExperimentConfig, pilots: &[PolicyArg], line: &str) -> Result<()> {
    let default = [PolicyArg::Con, PolicyArg::Unc, PolicyArg::Img, PolicyArg::Reg, PolicyArg::Full, PolicyArg::Expert];
    let pilots = if pilots.is_empty() { &default[..] } else { pilots };
    let rollout = cfg.rollout();
    let mut curves: Vec<SuccessCurve> = Vec::new();
    for p in pilots {
        let curve = match p.variant() {
            Some(v) => {
                let policy = load_policy(cfg, v)?;
                evaluate_success(v.tag(), || Ok(policy.clone()), &cfg.eval_amplitudes, cfg.trials, cfg.seed, &rollout)?
            }
            None => {
                let pursuit = cfg.pursuit();
                evaluate_success("expert", || Ok(Expert::new(pursuit)), &cfg.eval_amplitudes, cfg.trials, cfg.seed, &rollout)?
            }
        };
        for pt in &curve.points {
            println!("{:<8} amplitude {:>4.1} m  success {:.3} ± {:.3}", curve.label, pt.amplitude, pt.mean, pt.std);
        }
        curves.push(curve);
    }
    let dir = cfg.eval_dir();
    fs::create_dir_all(&dir)?;
    write_success_csv(&dir.join("success_curve.csv"), &curves)?;
    write_success_svg(&dir.join("success_curve.svg"), &curves)?;
    write_resolved(cfg, &dir.join("success_curve.resolved.toml"), line)
}

fn pose_row(prefix: String, pose: Option<RelativeGatePose>) -> String {
    match pose {
        Some(p) => format!("{prefix},{},{},{},{}\n", p.r, p.theta.to_degrees(), p.phi.to_degrees(), p.psi.to_degrees()),
        None => format!("{prefix},,,,\n"),
    }
}

fn latent_models(list: &[ModelArg]) -> Vec<ModelVariant> {
    models_or(list, &[ModelArg::CmvaeCon]).into_iter().filter(|v| v.has_latent()).collect()
}

fn eval_interpolate(cfg: &ExperimentConfig, models: &[ModelArg], pair: &[usize], line: &str) -> Result<()> {
    let val = validation_samples(cfg)?;
    let [a, b] = pair else {
        return Err(Error::Usage("--pair takes exactly two indices".into()));
    };
    let get = |i: usize| val.samples.get(i).map(|s| &s.image).ok_or_else(|| Error::Usage(format!("sample {i} is beyond the validation split ({})", val.len())));
    let (ia, ib) = (get(*a)?, get(*b)?);
    let dir = cfg.eval_dir();
    fs::create_dir_all(&dir)?;
    for v in latent_models(models) {
        let model = load_model(cfg, v)?;
        let steps = interpolate(&model, ia, ib, cfg.interp_steps)?;
        let mut tiles = vec![ia.clone()];
        tiles.extend(steps.iter().map(|s| s.image.clone()));
        tiles.push(ib.clone());
        write_ppm(&dir.join(format!("interpolate_{}.ppm", v.tag())), &tile_horizontal(&tiles)?)?;
        let mut csv = String::from("t,r,theta_deg,phi_deg,psi_deg\n");
        for s in &steps {
            csv.push_str(&pose_row(format!("{}", s.t), s.pose));
        }
        fs::write(dir.join(format!("interpolate_{}.csv", v.tag())), csv)?;
    }
    write_resolved(cfg, &dir.join("interpolate.resolved.toml"), line)
}

/// Spread of the latent means over up to 512 validation images.
fn latent_spread(model: &CmvaeModel, images: &[&Tensor], dim: usize) -> Result<f32> {
    let batch = stack_images(images.iter().copied(), model.arch.height, model.arch.width)?;
    let f = model.features(&batch)?;
    let n = model.arch.latent;
    let vals: Vec<f32> = f.chunks(n).map(|c| c[dim]).collect();
    let mean = vals.iter().sum::<f32>() / vals.len() as f32;
    Ok((vals.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / vals.len() as f32).sqrt())
}

fn eval_traverse(cfg: &ExperimentConfig, models: &[ModelArg], dim: usize, line: &str) -> Result<()> {
    let val = validation_samples(cfg)?;
    let base = &val.samples.first().ok_or_else(|| Error::dataset("validation split is empty"))?.image;
    let imgs: Vec<&Tensor> = val.samples.iter().take(512).map(|s| &s.image).collect();
    let dir = cfg.eval_dir();
    fs::create_dir_all(&dir)?;
    for v in latent_models(models) {
        let model = load_model(cfg, v)?;
        if dim >= model.arch.latent {
            return Err(Error::Usage(format!("--dim {dim} is out of range for a latent of size {}", model.arch.latent)));
        }
        let span = cfg.traverse_sigmas * latent_spread(&model, &imgs, dim)?;
        let t = latent_traversal(&model, base, dim, span, cfg.traverse_steps)?;
        write_ppm(&dir.join(format!("traverse_{}_dim{dim}.ppm", v.tag())), &t.mosaic)?;
        let mut csv = String::from("z,r,theta_deg,phi_deg,psi_deg\n");
        for (z, p) in t.values.iter().zip(&t.poses) {
            csv.push_str(&pose_row(format!("{z}"), *p));
        }
        fs::write(dir.join(format!("traverse_{}_dim{dim}.csv", v.tag())), csv)?;
    }
    write_resolved(cfg, &dir.join("traverse.resolved.toml"), line)
}
