use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::Vec3;

/// Position, velocity and acceleration at a trajectory endpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
}

/// Per-axis quintic `p(t) = Σ c_k t^k` on `[0, duration]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuinticSegment {
    pub coeffs: [[f64; 6]; 3],
    pub duration: f64,
    pub start_time: f64,
}

fn row(t: f64, deriv: usize) -> [f64; 6] {
    let mut r = [0.0; 6];
    for k in deriv..6 {
        let mut f = 1.0;
        for j in 0..deriv {
            f *= (k - j) as f64;
        }
        r[k] = f * t.powi((k - deriv) as i32);
    }
    r
}

/// Solves the 6×6 boundary-value system per axis; the result minimizes the
/// integrated squared jerk among trajectories meeting both endpoints.
pub fn plan_min_jerk(start: &Boundary, goal: &Boundary, duration: f64) -> Result<QuinticSegment> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::domain(format!("segment duration must be positive, got {duration}")));
    }
    let mut m = Matrix6::zeros();
    for (i, (t, d)) in [(0.0, 0), (0.0, 1), (0.0, 2), (duration, 0), (duration, 1), (duration, 2)].into_iter().enumerate() {
        let r = row(t, d);
        for k in 0..6 {
            m[(i, k)] = r[k];
        }
    }
    let lu = m.lu();
    let mut coeffs = [[0.0; 6]; 3];
    for axis in 0..3 {
        let rhs = Vector6::new(start.p[axis], start.v[axis], start.a[axis], goal.p[axis], goal.v[axis], goal.a[axis]);
        let c = lu.solve(&rhs).ok_or_else(|| Error::domain("singular boundary system"))?;
        coeffs[axis] = std::array::from_fn(|k| c[k]);
    }
    Ok(QuinticSegment { coeffs, duration, start_time: 0.0 })
}

impl QuinticSegment {
    fn eval(&self, t: f64, deriv: usize) -> Vec3 {
        let r = row(t, deriv);
        std::array::from_fn(|axis| (0..6).map(|k| self.coeffs[axis][k] * r[k]).sum())
    }

    pub fn position(&self, t: f64) -> Vec3 {
        self.eval(t, 0)
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        self.eval(t, 1)
    }

    pub fn acceleration(&self, t: f64) -> Vec3 {
        self.eval(t, 2)
    }

    pub fn jerk(&self, t: f64) -> Vec3 {
        self.eval(t, 3)
    }

    /// `∫₀ᵀ |p'''(t)|² dt`, exact for the polynomial.
    pub fn jerk_integral(&self) -> f64 {
        jerk_integral(&self.coeffs, self.duration)
    }
}

/// Squared-jerk integral of per-axis degree-5 polynomials over `[0, T]`.
pub fn jerk_integral(coeffs: &[[f64; 6]; 3], duration: f64) -> f64 {
    let mut total = 0.0;
    for c in coeffs {
        // p''' = 6c3 + 24c4 t + 60c5 t²
        let q = [6.0 * c[3], 24.0 * c[4], 60.0 * c[5]];
        for i in 0..3 {
            for j in 0..3 {
                total += q[i] * q[j] * duration.powi((i + j + 1) as i32) / (i + j + 1) as f64;
            }
        }
    }
    total
}
