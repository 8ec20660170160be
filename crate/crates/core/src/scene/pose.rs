use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Smallest distance a polar angle keeps from either pole.
pub const POLE_EPS: f64 = 1e-6;

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Pose of the next gate in the drone body frame (x forward, y left, z up).
///
/// `theta` is the azimuth (positive to the left), `phi` the polar angle from
/// body +z, and `psi` the gate yaw relative to the body yaw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeGatePose {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
}

impl RelativeGatePose {
    pub fn new(r: f64, theta: f64, phi: f64, psi: f64) -> Result<Self> {
        let p = Self { r, theta, phi, psi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r > 0.0
            && self.theta > -PI
            && self.theta <= PI
            && self.phi > 0.0
            && self.phi < PI
            && self.psi > -PI
            && self.psi <= PI;
        if ok && [self.r, self.theta, self.phi, self.psi].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid gate pose {self:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.r, self.theta, self.phi, self.psi]
    }
}

/// Body-frame position of the gate center.
pub fn spherical_to_cartesian(p: &RelativeGatePose) -> [f64; 3] {
    let (sp, cp) = p.phi.sin_cos();
    let (st, ct) = p.theta.sin_cos();
    [p.r * sp * ct, p.r * sp * st, p.r * cp]
}

/// Inverse of [`spherical_to_cartesian`]; `psi = wrap(gate_yaw_world − body_yaw)`.
pub fn cartesian_to_spherical(v: [f64; 3], gate_yaw_world: f64, body_yaw: f64) -> Result<RelativeGatePose> {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain("cannot convert a zero vector to spherical coordinates"));
    }
    let phi = (v[2] / r).clamp(-1.0, 1.0).acos().clamp(POLE_EPS, PI - POLE_EPS);
    let theta = wrap_angle(v[1].atan2(v[0]));
    let psi = wrap_angle(gate_yaw_world - body_yaw);
    Ok(RelativeGatePose { r, theta, phi, psi })
}

/// Closed interval `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width()
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.max == self.min {
            self.min
        } else {
            rng.uniform(self.min, self.max)
        }
    }
}

/// Sampling ranges for dataset generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRanges {
    pub r: Range,
    pub theta: Range,
    pub phi: Range,
    pub psi: Range,
    pub roll: Range,
    pub pitch: Range,
}

impl PoseRanges {
    /// Defaults for a camera with horizontal field of view `hfov`.
    pub fn for_hfov(hfov: f64) -> Self {
        let az = hfov / 2.4;
        Self {
            r: Range::new(2.0, 10.0),
            theta: Range::new(-az, az),
            phi: Range::new(PI / 2.0 - 0.4, PI / 2.0 + 0.4),
            psi: Range::new(-PI / 2.0, PI / 2.0),
            roll: Range::new(-0.15, 0.15),
            pitch: Range::new(-0.15, 0.15),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("r", self.r),
            ("theta", self.theta),
            ("phi", self.phi),
            ("psi", self.psi),
            ("roll", self.roll),
            ("pitch", self.pitch),
        ];
        for (name, r) in named {
            if !(r.min <= r.max) || !r.min.is_finite() || !r.max.is_finite() {
                return Err(Error::config(format!("empty {name} range [{}, {}]", r.min, r.max)));
            }
        }
        let nested = self.r.min > 0.0
            && self.theta.min > -PI
            && self.theta.max <= PI
            && self.phi.min > 0.0
            && self.phi.max < PI
            && self.psi.min > -PI
            && self.psi.max <= PI;
        if !nested {
            return Err(Error::config("pose ranges leave the valid pose domain"));
        }
        Ok(())
    }

    pub fn contains(&self, s: &PoseSample) -> bool {
        self.r.contains(s.pose.r)
            && self.theta.contains(s.pose.theta)
            && self.phi.contains(s.pose.phi)
            && self.psi.contains(s.pose.psi)
            && self.roll.contains(s.roll)
            && self.pitch.contains(s.pitch)
    }
}

/// A sampled gate pose together with the camera roll/pitch perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub pose: RelativeGatePose,
    pub roll: f64,
    pub pitch: f64,
}

/// Independent uniform draws per component.
pub fn sample_pose(rng: &mut Rng, ranges: &PoseRanges) -> Result<PoseSample> {
    ranges.validate()?;
    let pose = RelativeGatePose {
        r: ranges.r.sample(rng),
        theta: ranges.theta.sample(rng),
        phi: ranges.phi.sample(rng),
        psi: ranges.psi.sample(rng),
    };
    let roll = ranges.roll.sample(rng);
    let pitch = ranges.pitch.sample(rng);
    Ok(PoseSample { pose, roll, pitch })
}
