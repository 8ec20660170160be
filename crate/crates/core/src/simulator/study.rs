//! Success-rate study: mean score over randomized tracks per offset
//! amplitude.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{make_track, rollout, Pilot, RolloutConfig};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SuccessPoint {
    pub amplitude: f64,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuccessCurve {
    pub label: String,
    pub points: Vec<SuccessPoint>,
    /// Per-trial scores, one row per amplitude.
    pub scores: Vec<Vec<f64>>,
}

/// Random stream for trial `trial` at amplitude index `a`.
pub fn trial_rng(seed: u64, a: usize, trial: usize) -> Rng {
    Rng::new(seed, 0x5eed).substream(((a as u64) << 32) | trial as u64)
}

/// Runs `trials` episodes per amplitude on fresh seeded tracks. Trials run
/// in parallel; each builds its own pilot with `make_pilot`.
pub fn evaluate_success<P, F>(label: &str, make_pilot: F, amplitudes: &[f64], trials: usize, seed: u64, cfg: &RolloutConfig) -> Result<SuccessCurve>
where
    P: Pilot,
    F: Fn() -> Result<P> + Sync,
{
    if trials == 0 {
        return Err(Error::config("success study needs at least one trial"));
    }
    let jobs: Vec<(usize, usize)> = (0..amplitudes.len()).flat_map(|a| (0..trials).map(move |t| (a, t))).collect();
    let scores: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(a, t)| {
            let mut rng = trial_rng(seed, a, t);
            let track = make_track(&mut rng, amplitudes[a])?;
            let mut pilot = make_pilot()?;
            Ok(rollout(&mut pilot, &track, cfg, &mut rng, |_, _| {})?.score)
        })
        .collect();
    let mut rows = vec![Vec::with_capacity(trials); amplitudes.len()];
    for (&(a, _), s) in jobs.iter().zip(scores) {
        rows[a].push(s?);
    }
    let points = amplitudes
        .iter()
        .zip(&rows)
        .map(|(&amplitude, s)| {
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let std = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            SuccessPoint { amplitude, mean, std, trials: s.len() }
        })
        .collect();
    Ok(SuccessCurve { label: label.to_string(), points, scores: rows })
}

/// `label,amplitude,mean,std,trials` rows for one or more curves.
pub fn write_success_csv(path: &Path, curves: &[SuccessCurve]) -> Result<()> {
    let mut s = String::from("label,amplitude,mean,std,trials\n");
    for c in curves {
        for p in &c.points {
            writeln!(s, "{},{},{},{},{}", c.label, p.amplitude, p.mean, p.std, p.trials).unwrap();
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];

/// Line plot of success rate against offset amplitude.
pub fn write_success_svg(path: &Path, curves: &[SuccessCurve]) -> Result<()> {
    let (w, h, m) = (520.0, 360.0, 50.0);
    let max_a = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.amplitude))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let x = |a: f64| m + (w - 2.0 * m) * a / max_a;
    let y = |v: f64| h - m - (h - 2.0 * m) * v;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m).unwrap();
    writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m).unwrap();
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.0}%</text>"#, m - 6.0, y(v) + 4.0, v * 100.0).unwrap();
        let a = max_a * v;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{a:.2}</text>"#, x(a), h - m + 16.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">gate offset amplitude (m)</text>"#, w / 2.0, h - 12.0).unwrap();
    writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">success rate</text>"#, h / 2.0, h / 2.0).unwrap();
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c.points.iter().map(|p| format!("{:.1},{:.1}", x(p.amplitude), y(p.mean))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" ")).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, w - m - 90.0, m + 16.0 * i as f64, c.label).unwrap();
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}
