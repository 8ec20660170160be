use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera looking along body +x with square pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub hfov: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { width: 64, height: 64, hfov: std::f64::consts::FRAC_PI_2 }
    }
}

impl CameraIntrinsics {
    pub fn new(width: usize, height: usize, hfov: f64) -> Result<Self> {
        let cam = Self { width, height, hfov };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::config(format!("image must be at least 8×8, got {}×{}", self.width, self.height)));
        }
        if !(self.hfov > 0.0 && self.hfov < std::f64::consts::PI) {
            return Err(Error::config(format!("hfov must lie in (0, π), got {}", self.hfov)));
        }
        Ok(())
    }

    pub fn fx(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.hfov).tan()
    }

    pub fn fy(&self) -> f64 {
        self.fx()
    }

    pub fn cx(&self) -> f64 {
        0.5 * self.width as f64
    }

    pub fn cy(&self) -> f64 {
        0.5 * self.height as f64
    }

    pub fn vfov(&self) -> f64 {
        2.0 * (0.5 * self.height as f64 / self.fy()).atan()
    }

    /// Pixel coordinates `(u, v)` of a camera-frame point, or `None` behind
    /// the image plane. Pixel `(i, j)` spans `[j, j+1) × [i, i+1)`.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[0] <= 1e-9 {
            return None;
        }
        Some((self.cx() + self.fx() * (-p[1] / p[0]), self.cy() + self.fy() * (-p[2] / p[0])))
    }

    /// Camera-frame ray direction (unnormalized, unit forward component)
    /// through image position `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [1.0, -(u - self.cx()) / self.fx(), -(v - self.cy()) / self.fy()]
    }
}
