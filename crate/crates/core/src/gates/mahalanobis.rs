use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ledoit_wolf::{center, ledoit_wolf};
use super::linalg::{cholesky, cholesky_with_jitter, forward_substitute};
use super::{check_query, check_threshold, margin_scale_from, Gate};
use crate::{Error, Result};

/// Global distance from the fraud center under a Ledoit-Wolf covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisGate {
    pub mu: Vec<f64>,
    /// Shrunk covariance Σ*, including any jitter that was needed.
    pub sigma_star: Array2<f64>,
    /// Lower Cholesky factor of `sigma_star`.
    pub chol: Array2<f64>,
    /// Shrinkage intensity.
    pub rho: f64,
    /// Diagonal jitter added to make `sigma_star` factorizable (usually 0).
    pub jitter: f64,
    pub tau: Option<f64>,
    pub margin_scale: f64,
}

/// Fit on standardized fraud vectors.
pub fn fit_mahalanobis<R: AsRef<[f64]>>(
    fraud: &[R],
    jitter_ladder: &[f64],
) -> Result<MahalanobisGate> {
    if fraud.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "Mahalanobis gate needs at least 2 fraud samples, got {}",
            fraud.len()
        )));
    }
    let (mu, centered) = center(fraud);
    let lw = ledoit_wolf(&centered)?;
    let (chol, sigma_star, jitter) =
        cholesky_with_jitter(&lw.covariance, lw.target_scale, jitter_ladder).ok_or_else(|| {
            Error::Numerical("shrunk covariance is not positive definite even after jitter".into())
        })?;
    let mut gate = MahalanobisGate {
        mu,
        sigma_star,
        chol,
        rho: lw.shrinkage,
        jitter,
        tau: None,
        margin_scale: 1.0,
    };
    let scores = fraud
        .iter()
        .map(|x| gate.score(x.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    gate.margin_scale = margin_scale_from(&scores);
    Ok(gate)
}

impl MahalanobisGate {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidInput("empty Mahalanobis mean".into()));
        }
        if self.sigma_star.dim() != (d, d) || self.chol.dim() != (d, d) {
            return Err(Error::InvalidInput(
                "covariance shape does not match mean".into(),
            ));
        }
        let mut values = self
            .mu
            .iter()
            .chain(self.sigma_star.iter())
            .chain(self.chol.iter());
        if values.any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Mahalanobis gate"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidInput("shrinkage outside [0, 1]".into()));
        }
        // the stored factor must be the factor of the stored covariance
        let refactored = cholesky(&self.sigma_star)
            .ok_or_else(|| Error::InvalidInput("sigma_star is not positive definite".into()))?;
        let tol = 1e-9 * (1.0 + self.chol.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        if refactored
            .iter()
            .zip(self.chol.iter())
            .any(|(a, b)| (a - b).abs() > tol)
        {
            return Err(Error::InvalidInput(
                "chol does not factor sigma_star".into(),
            ));
        }
        check_threshold(self.tau, self.margin_scale)
    }
}

impl Gate for MahalanobisGate {
    fn name(&self) -> &str {
        "mahalanobis"
    }

    /// `sqrt((x−μ)ᵀ Σ*⁻¹ (x−μ))` via one forward substitution against the
    /// cached factor.
    fn score(&self, x: &[f64]) -> Result<f64> {
        check_query(x, self.dim())?;
        let diff: Vec<f64> = x.iter().zip(&self.mu).map(|(a, b)| a - b).collect();
        let z = forward_substitute(&self.chol, &diff);
        Ok(z.dot(&z).sqrt())
    }

    fn threshold(&self) -> Option<f64> {
        self.tau
    }

    fn set_threshold(&mut self, tau: f64) {
        self.tau = Some(tau);
    }

    fn margin_scale(&self) -> f64 {
        self.margin_scale
    }
}
