use super::rng::Rng;
use crate::error::{Error, Result};

/// Log-variance bounds applied to every encoder output.
pub const LOGVAR_MIN: f32 = -10.0;
pub const LOGVAR_MAX: f32 = 10.0;

/// Diagonal Gaussian `N(μ, diag(σ²))` over the latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    mu: Vec<f32>,
    sigma: Vec<f32>,
}

impl LatentDistribution {
    pub fn new(mu: Vec<f32>, sigma: Vec<f32>) -> Result<Self> {
        if mu.len() != sigma.len() || mu.is_empty() {
            return Err(Error::config(format!(
                "latent mean has {} dims but sigma has {}",
                mu.len(),
                sigma.len()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::domain(format!("sigma must be strictly positive, got {s}")));
        }
        Ok(Self { mu, sigma })
    }

    /// From encoder outputs: `σ = exp(½·clamp(logvar))`.
    pub fn from_logvar(mu: Vec<f32>, logvar: &[f32]) -> Result<Self> {
        let sigma = logvar.iter().map(|lv| (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp()).collect();
        Self::new(mu, sigma)
    }

    pub fn mu(&self) -> &[f32] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f32] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// `KL(q ‖ N(0, I)) = Σᵢ ½(μᵢ² + σᵢ² − 1 − ln σᵢ²)`.
pub fn gaussian_kl(d: &LatentDistribution) -> f64 {
    d.mu
        .iter()
        .zip(&d.sigma)
        .map(|(&m, &s)| {
            let (m, s2) = (m as f64, (s as f64).powi(2));
            0.5 * (m * m + s2 - 1.0 - s2.ln())
        })
        .sum()
}

/// Gradient of [`gaussian_kl`] with respect to `(μ, σ)`.
pub fn gaussian_kl_grad(d: &LatentDistribution) -> (Vec<f64>, Vec<f64>) {
    let dmu = d.mu.iter().map(|&m| m as f64).collect();
    let dsigma = d.sigma.iter().map(|&s| s as f64 - 1.0 / s as f64).collect();
    (dmu, dsigma)
}

/// Draws `z = μ + σ ⊙ ε` with `ε ~ N(0, I)` from `rng`.
pub fn reparameterize(d: &LatentDistribution, rng: &mut Rng) -> Vec<f32> {
    d.mu
        .iter()
        .zip(&d.sigma)
        .map(|(m, s)| m + s * rng.normal() as f32)
        .collect()
}

/// Standard-normal noise for a whole batch of reparameterized samples.
pub fn standard_normal(n: usize, rng: &mut Rng) -> Vec<f32> {
    (0..n).map(|_| rng.normal() as f32).collect()
}
