//! Flat-shaded software renderer for a single gate over a sky/ground
//! backdrop.
//!
//! Every pixel is supersampled on a regular grid. Each sample ray is
//! classified against the horizon (sky gradient above, ground below) and then
//! tested against the gate frame, which is modelled as four square-section
//! bars. Bar faces are flat-shaded by which axis of the gate frame they face.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use super::pose::{spherical_to_cartesian, RelativeGatePose};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub type Rgb = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Outer side of the square gate, meters.
    pub gate_side: f64,
    /// Bar width in the gate plane, meters.
    pub bar_thickness: f64,
    /// Bar extent along the gate normal, meters.
    pub bar_depth: f64,
    pub gate_color: Rgb,
    pub ground_color: Rgb,
    pub sky_top: Rgb,
    pub sky_bottom: Rgb,
    /// Relative appearance jitter amplitudes.
    pub gate_jitter: f64,
    pub ground_jitter: f64,
    pub sky_jitter: f64,
    /// Supersampling grid per pixel axis.
    pub samples_per_axis: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            gate_side: 1.5,
            bar_thickness: 0.15,
            bar_depth: 0.3,
            gate_color: [0.95, 0.45, 0.1],
            ground_color: [0.3, 0.5, 0.22],
            sky_top: [0.3, 0.5, 0.9],
            sky_bottom: [0.78, 0.86, 0.95],
            gate_jitter: 0.10,
            ground_jitter: 0.15,
            sky_jitter: 0.15,
            samples_per_axis: 4,
        }
    }
}

fn valid_color(c: &Rgb) -> bool {
    c.iter().all(|v| (0.0..=1.0).contains(v))
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bar_thickness > 0.0 && self.gate_side > 2.0 * self.bar_thickness) {
            return Err(Error::config("gate side must exceed twice the bar thickness, which must be positive"));
        }
        if !(self.bar_depth > 0.0) {
            return Err(Error::config("bar depth must be positive"));
        }
        if ![self.gate_color, self.ground_color, self.sky_top, self.sky_bottom].iter().all(valid_color) {
            return Err(Error::config("scene colors must lie in [0, 1]"));
        }
        if self.samples_per_axis == 0 {
            return Err(Error::config("samples_per_axis must be positive"));
        }
        Ok(())
    }

    /// Copy with per-channel multiplicative color jitter drawn from `rng`.
    pub fn jittered(&self, rng: &mut Rng) -> Self {
        let mut out = *self;
        let jitter = |c: Rgb, amp: f64, rng: &mut Rng| -> Rgb {
            let mut o = c;
            for v in &mut o {
                *v = (*v * rng.uniform(1.0 - amp, 1.0 + amp)).clamp(0.0, 1.0);
            }
            o
        };
        out.gate_color = jitter(self.gate_color, self.gate_jitter, rng);
        out.ground_color = jitter(self.ground_color, self.ground_jitter, rng);
        out.sky_top = jitter(self.sky_top, self.sky_jitter, rng);
        out.sky_bottom = jitter(self.sky_bottom, self.sky_jitter, rng);
        out
    }
}

/// Rotation taking camera-frame vectors to the level (yaw-only) frame:
/// roll about x first, then pitch about y.
pub fn camera_to_level(roll: f64, pitch: f64) -> Matrix3<f64> {
    let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), roll);
    let ry = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), pitch);
    (ry * rx).into_inner()
}

/// Gate frame in camera coordinates: center plus normal/lateral/up axes.
struct GateFrame {
    center: Vector3<f64>,
    axes_t: Matrix3<f64>,
}

impl GateFrame {
    fn new(pose: &RelativeGatePose, roll: f64, pitch: f64) -> Self {
        let c = spherical_to_cartesian(pose);
        let level_to_cam = camera_to_level(roll, pitch).transpose();
        let (s, co) = pose.psi.sin_cos();
        let normal = level_to_cam * Vector3::new(co, s, 0.0);
        let lateral = level_to_cam * Vector3::new(-s, co, 0.0);
        let up = level_to_cam * Vector3::z();
        let axes = Matrix3::from_columns(&[normal, lateral, up]);
        Self { center: Vector3::new(c[0], c[1], c[2]), axes_t: axes.transpose() }
    }
}

/// Axis-aligned box in gate coordinates (normal, lateral, up).
#[derive(Clone, Copy)]
struct Bar {
    lo: [f64; 3],
    hi: [f64; 3],
}

fn gate_bars(side: f64, t: f64, depth: f64) -> [Bar; 4] {
    let (h, d) = (0.5 * side, 0.5 * depth);
    [
        Bar { lo: [-d, -h, h - t], hi: [d, h, h] },
        Bar { lo: [-d, -h, -h], hi: [d, h, -h + t] },
        Bar { lo: [-d, -h, -h + t], hi: [d, -h + t, h - t] },
        Bar { lo: [-d, h - t, -h + t], hi: [d, h, h - t] },
    ]
}

/// Slab test; returns the entry distance and the entry face index
/// (`2·axis` for the face looking along −axis, `2·axis + 1` along +axis).
fn hit_bar(o: &[f64; 3], d: &[f64; 3], bar: &Bar) -> Option<(f64, usize)> {
    let (mut t_near, mut t_far, mut face) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for k in 0..3 {
        if d[k].abs() < 1e-12 {
            if o[k] < bar.lo[k] || o[k] > bar.hi[k] {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = ((bar.lo[k] - o[k]) / d[k], (bar.hi[k] - o[k]) / d[k]);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        if a > t_near {
            t_near = a;
            face = 2 * k + usize::from(d[k] < 0.0);
        }
        t_far = t_far.min(b);
    }
    (t_near <= t_far && t_near > 1e-6).then_some((t_near, face))
}

/// Brightness per face orientation, as lit by a fixed light from the gate's
/// front-left-above: −normal, +normal, −lateral, +lateral, −up, +up.
const FACE_SHADE: [f64; 6] = [1.0, 0.8, 0.35, 0.7, 0.5, 0.9];

/// Renders the onboard view of a gate at `pose` into a `3×H×W` tensor in
/// `[0, 1]`. A gate that is entirely behind the camera yields background only.
pub fn render(cam: &CameraIntrinsics, scene: &SceneParams, pose: &RelativeGatePose, roll: f64, pitch: f64) -> Tensor {
    let (w, h) = (cam.width, cam.height);
    let ss = scene.samples_per_axis.max(1);
    let inv = 1.0 / (ss * ss) as f64;
    let to_level = camera_to_level(roll, pitch);
    let gate = GateFrame::new(pose, roll, pitch);
    let bars = gate_bars(scene.gate_side, scene.bar_thickness, scene.bar_depth);
    // Ray origin in gate coordinates is the same for every sample.
    let origin = gate.axes_t * (-gate.center);
    let origin = [origin.x, origin.y, origin.z];
    let mut out = vec![0.0f32; 3 * w * h];
    for i in 0..h {
        for j in 0..w {
            let mut acc = [0.0f64; 3];
            for si in 0..ss {
                for sj in 0..ss {
                    let u = j as f64 + (sj as f64 + 0.5) / ss as f64;
                    let v = i as f64 + (si as f64 + 0.5) / ss as f64;
                    let r = cam.ray(u, v);
                    let dir = Vector3::new(r[0], r[1], r[2]);
                    let c = shade_sample(scene, &to_level, &gate, &bars, &origin, &dir);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for k in 0..3 {
                out[(k * h + i) * w + j] = (acc[k] * inv).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(&[3, h, w], out).expect("render buffer matches shape")
}

fn shade_sample(
    scene: &SceneParams,
    to_level: &Matrix3<f64>,
    gate: &GateFrame,
    bars: &[Bar; 4],
    origin: &[f64; 3],
    dir: &Vector3<f64>,
) -> Rgb {
    let dg = gate.axes_t * dir;
    let dg = [dg.x, dg.y, dg.z];
    let mut best: Option<(f64, usize)> = None;
    for bar in bars {
        if let Some(hit) = hit_bar(origin, &dg, bar) {
            if best.map_or(true, |b| hit.0 < b.0) {
                best = Some(hit);
            }
        }
    }
    if let Some((_, face)) = best {
        let s = FACE_SHADE[face];
        return [scene.gate_color[0] * s, scene.gate_color[1] * s, scene.gate_color[2] * s];
    }
    let d = to_level * dir;
    let horiz = (d.x * d.x + d.y * d.y).sqrt();
    let elevation = d.z.atan2(horiz);
    if elevation > 0.0 {
        let t = (elevation / std::f64::consts::FRAC_PI_4).min(1.0);
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = scene.sky_bottom[k] * (1.0 - t) + scene.sky_top[k] * t;
        }
        c
    } else {
        scene.ground_color
    }
}
