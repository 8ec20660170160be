use std::fs;
use std::path::Path;
use std::process::Command;

use visuomotor::cli::{self, Cli, ExperimentConfig};
use visuomotor::cmvae::CmvaeModel;
use visuomotor::Error;

fn small(out: &Path) -> Vec<String> {
    [
        format!("out_dir={:?}", out.to_str().unwrap()),
        "width=16".into(),
        "height=16".into(),
        "channels=[4,6,8]".into(),
        "latent=6".into(),
        "samples_per_axis=1".into(),
        "batch_size=16".into(),
        "threads=1".into(),
    ]
    .into_iter()
    .flat_map(|s| ["--set".to_string(), s])
    .collect()
}

fn run(out: &Path, args: &[&str]) -> visuomotor::Result<()> {
    let mut all = vec!["visuomotor".to_string()];
    all.extend(small(out));
    all.extend(args.iter().map(|s| s.to_string()));
    cli::run(all)
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_visuomotor")).args(args).output().unwrap()
}

#[test]
fn gen_data_creates_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/run");
    run(&out, &["gen-data", "--kind", "representation", "--n", "100"]).unwrap();
    let manifest = fs::read_to_string(out.join("data/manifest.json")).unwrap();
    assert!(manifest.contains("\"n\": 100"));
    assert_eq!(fs::read(out.join("data/images.bin")).unwrap().len(), 100 * 16 * 16 * 3);
    let resolved = fs::read_to_string(out.join("data/resolved_config.toml")).unwrap();
    assert!(resolved.starts_with("# GenData"));

    let again = dir.path().join("again");
    run(&again, &["gen-data", "--kind", "representation", "--n", "100"]).unwrap();
    assert_eq!(manifest, fs::read_to_string(again.join("data/manifest.json")).unwrap());
    assert_eq!(fs::read(out.join("data/images.bin")).unwrap(), fs::read(again.join("data/images.bin")).unwrap());
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    run(&out, &["--set", "seed=17", "gen-data", "--kind", "representation", "--n", "40"]).unwrap();
    // Re-run from the resolved file alone, redirecting only the output root.
    let cfg_path = out.join("data/resolved_config.toml");
    let other = dir.path().join("b");
    cli::run(["visuomotor", "-c", cfg_path.to_str().unwrap(), "--set", &format!("out_dir={:?}", other.to_str().unwrap()), "gen-data", "--kind", "representation"]).unwrap();
    assert_eq!(fs::read(out.join("data/manifest.json")).unwrap(), fs::read(other.join("data/manifest.json")).unwrap());
    assert_eq!(fs::read(out.join("data/images.bin")).unwrap(), fs::read(other.join("data/images.bin")).unwrap());
}

#[test]
fn config_layers_resolve_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.toml");
    fs::write(&file, "seed = 5\nepochs = 7\ntrials = 3\n").unwrap();
    let env = |k: &str| (k == "VISUOMOTOR_SEED").then(|| "9".to_string());
    let cfg = ExperimentConfig::resolve(Some(&file), &["trials=4".into()], env).unwrap();
    assert_eq!((cfg.seed, cfg.epochs, cfg.trials), (9, 7, 4));
    let env_out = |k: &str| (k == "VISUOMOTOR_OUT").then(|| "/tmp/somewhere".to_string());
    let cfg = ExperimentConfig::resolve(None, &[], env_out).unwrap();
    assert_eq!(cfg.out_dir, Path::new("/tmp/somewhere"));
    assert!(matches!(ExperimentConfig::resolve(None, &["no_such_key=1".into()], |_| None), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::resolve(None, &["epochs".into()], |_| None), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::resolve(None, &[], |_| Some("x".into())), Err(Error::Config(_))));
    let d = ExperimentConfig::default();
    let round: ExperimentConfig = toml::from_str(&d.to_toml().unwrap()).unwrap();
    assert_eq!(round, d);
}

#[test]
fn train_and_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_path_buf();
    run(&out, &["gen-data", "--kind", "representation", "--n", "1000"]).unwrap();
    run(&out, &["train", "--model", "cmvae-con", "--epochs", "2"]).unwrap();
    let model = CmvaeModel::load(&out.join("models/cmvae_constrained.ckpt")).unwrap();
    assert_eq!(model.arch.latent, 6);
    let loss = fs::read_to_string(out.join("models/cmvae_constrained_loss.csv")).unwrap();
    let rows: Vec<&str> = loss.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.contains(",train,")).count(), 2);
    assert_eq!(rows.iter().filter(|r| r.contains(",validation,")).count(), 2);
    assert!(out.join("models/cmvae_constrained.resolved.toml").exists());

    run(&out, &["eval", "--what", "pose-error", "--model", "cmvae-con"]).unwrap();
    let table = fs::read_to_string(out.join("eval/pose_error.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "model,n,radius_m,radius_se,azimuth_deg,azimuth_se,polar_deg,polar_se,yaw_deg,yaw_se");
    assert!(table.lines().nth(1).unwrap().starts_with("cmvae_constrained,200,"));

    run(&out, &["eval", "--what", "traverse", "--model", "cmvae-con", "--dim", "0"]).unwrap();
    let t = fs::read_to_string(out.join("eval/traverse_cmvae_constrained_dim0.csv")).unwrap();
    let rows: Vec<Vec<&str>> = t.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        assert_eq!(&r[2..], &rows[0][2..], "θ, φ, ψ must not move when sweeping z[0]");
    }
    assert!(out.join("eval/traverse_cmvae_constrained_dim0.ppm").exists());

    run(&out, &["eval", "--what", "interpolate", "--model", "cmvae-con", "--pair", "3,4"]).unwrap();
    let i = fs::read_to_string(out.join("eval/interpolate_cmvae_constrained.csv")).unwrap();
    assert_eq!(i.lines().count(), 11);
    let ppm = fs::read(out.join("eval/interpolate_cmvae_constrained.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n192 16\n255\n"));

    // frozen policy without its feature model
    let err = run(&out, &["train", "--policy", "unc"]).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("cmvae_unconstrained.ckpt"), "{err}");

    run(&out, &["--set", "demo_records=300", "gen-data", "--kind", "demos"]).unwrap();
    run(&out, &["train", "--policy", "con", "--epochs", "3"]).unwrap();
    assert!(out.join("policies/BC_con.ckpt").exists());
    assert_eq!(fs::read_to_string(out.join("policies/BC_con_loss.csv")).unwrap().lines().count(), 4);
    run(&out, &["--set", "max_ticks=100", "eval", "--what", "success-curve", "--policy", "con,expert", "--trials", "1", "--amplitudes", "0,1"]).unwrap();
    let csv = fs::read_to_string(out.join("eval/success_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(fs::read_to_string(out.join("eval/success_curve.svg")).unwrap().contains("BC_con"));
}

#[test]
fn expert_success_curve_single_trial() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &["eval", "--what", "success-curve", "--policy", "expert", "--trials", "1", "--amplitudes", "0"]).unwrap();
    let csv = fs::read_to_string(dir.path().join("eval/success_curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1], "expert,0,1,0,1");
}

#[test]
fn missing_prerequisites_name_their_paths() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(dir.path(), &["train", "--model", "vae"]).unwrap_err();
    assert!(err.to_string().contains("manifest.json") && err.to_string().contains("gen-data"), "{err}");
    let err = run(dir.path(), &["eval", "--what", "success-curve", "--policy", "full"]).unwrap_err();
    assert!(err.to_string().contains("BC_full.ckpt"), "{err}");
}

#[test]
fn parse_errors_are_usage_errors() {
    assert!(matches!(cli::run(["visuomotor", "train"]), Err(Error::Usage(_))));
    assert!(matches!(cli::run(["visuomotor", "gen-data", "--kind", "pictures"]), Err(Error::Usage(_))));
    assert!(matches!(cli::run(["visuomotor", "train", "--model", "vae", "--policy", "con"]), Err(Error::Usage(_))));
    use clap::CommandFactory;
    Cli::command().debug_assert();
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["--set", "nonsense=1", "gen-data", "--kind", "demos"]).status.code(), Some(2));
    assert_eq!(bin(&["--set", "width=17", "gen-data", "--kind", "representation"]).status.code(), Some(2));

    let outset = format!("out_dir={out:?}");
    let base = ["--set", &outset, "--set", "width=16", "--set", "height=16", "--set", "channels=[4,6,8]", "--set", "samples_per_axis=1"];
    let ok = bin(&[&base[..], &["gen-data", "--kind", "representation", "--n", "64"]].concat());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    // diverging training
    let diverge = bin(&[&base[..], &["--set", "lr=1e30", "--set", "batch_size=16", "train", "--model", "regressor", "--epochs", "3"]].concat());
    assert_eq!(diverge.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverge.stderr));
    assert!(String::from_utf8_lossy(&diverge.stderr).starts_with("error: "));

    // corrupt dataset
    let images = dir.path().join("data/images.bin");
    let bytes = fs::read(&images).unwrap();
    fs::write(&images, &bytes[..bytes.len() / 2]).unwrap();
    let bad = bin(&[&base[..], &["--set", "batch_size=16", "train", "--model", "regressor", "--epochs", "1"]].concat());
    assert_eq!(bad.status.code(), Some(3), "{}", String::from_utf8_lossy(&bad.stderr));
}
