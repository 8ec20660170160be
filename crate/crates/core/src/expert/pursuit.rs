use serde::{Deserialize, Serialize};

use super::quintic::QuinticSegment;
use crate::scene::wrap_angle;
use crate::simulator::{world_to_body, DroneState, Limits, Vec3, VelocityCommand};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PursuitConfig {
    pub lookahead: f64,
    pub v_nominal: f64,
    pub yaw_gain: f64,
    /// Speed along the gate normal when passing the gate center.
    pub v_cross: f64,
    pub limits: Limits,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        Self { lookahead: 1.5, v_nominal: 2.0, yaw_gain: 1.5, v_cross: 1.5, limits: Limits::default() }
    }
}

const SAMPLES: usize = 400;

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// The point at arc length `lookahead` past the point of `segment` closest to
/// `position`. Beyond the segment end the path continues straight along the
/// final velocity direction.
pub fn lookahead_point(position: Vec3, segment: &QuinticSegment, lookahead: f64) -> Vec3 {
    let pts: Vec<Vec3> = (0..=SAMPLES).map(|i| segment.position(segment.duration * i as f64 / SAMPLES as f64)).collect();
    let closest = (0..pts.len())
        .min_by(|&a, &b| dist(pts[a], position).total_cmp(&dist(pts[b], position)))
        .unwrap_or(0);
    let mut travelled = 0.0;
    for i in closest..pts.len() - 1 {
        let d = dist(pts[i], pts[i + 1]);
        if travelled + d >= lookahead {
            let f = (lookahead - travelled) / d;
            return std::array::from_fn(|k| pts[i][k] + f * (pts[i + 1][k] - pts[i][k]));
        }
        travelled += d;
    }
    let end = pts[pts.len() - 1];
    let v = segment.velocity(segment.duration);
    let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if speed < 1e-9 {
        return end;
    }
    let rest = lookahead - travelled;
    std::array::from_fn(|k| end[k] + rest * v[k] / speed)
}

/// Velocity of magnitude `v_nominal` toward the lookahead point, in the body
/// frame, with a proportional yaw-rate command toward its bearing.
pub fn pure_pursuit(state: &DroneState, segment: &QuinticSegment, cfg: &PursuitConfig) -> VelocityCommand {
    let target = lookahead_point(state.position, segment, cfg.lookahead);
    let d: Vec3 = std::array::from_fn(|k| target[k] - state.position[k]);
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n < 1e-9 {
        return VelocityCommand::ZERO;
    }
    let w: Vec3 = std::array::from_fn(|k| cfg.v_nominal * d[k] / n);
    let b = world_to_body(state.yaw, w);
    let bearing = d[1].atan2(d[0]);
    let vpsi = if d[0].hypot(d[1]) > 1e-9 { cfg.yaw_gain * wrap_angle(bearing - state.yaw) } else { 0.0 };
    cfg.limits.clamp(VelocityCommand { vx: b[0], vy: b[1], vz: b[2], vpsi })
}
