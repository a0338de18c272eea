//! Statistical gates fitted on the labeled fraud distribution.
//!
//! A gate maps a standardized vector to a non-negative "safety distance":
//! larger means farther from fraud. A sample passes when its score reaches
//! the calibrated threshold τ, and its margin `(score − τ) / margin_scale`
//! is comparable across gates.

mod knn;
mod ledoit_wolf;
mod linalg;
mod mahalanobis;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use knn::{fit_knn, KnnDensityGate};
pub use ledoit_wolf::{center, ledoit_wolf, LedoitWolf};
pub use linalg::{cholesky, cholesky_with_jitter, forward_substitute};
pub use mahalanobis::{fit_mahalanobis, MahalanobisGate};

/// Default diagonal jitter ladder, in units of the mean eigenvalue.
pub const DEFAULT_JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Outcome of evaluating one gate on one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub score: f64,
    pub pass: bool,
    pub margin: f64,
}

/// Contract shared by every gate.
pub trait Gate {
    fn name(&self) -> &str;

    fn score(&self, x: &[f64]) -> Result<f64>;

    fn threshold(&self) -> Option<f64>;

    fn set_threshold(&mut self, tau: f64);

    fn margin_scale(&self) -> f64;

    /// Pass/margin decision against the calibrated threshold.
    fn evaluate(&self, x: &[f64]) -> Result<GateDecision> {
        let tau = self.threshold().ok_or_else(|| {
            Error::Config(format!("gate {} has no calibrated threshold", self.name()))
        })?;
        let score = self.score(x)?;
        Ok(decide(score, tau, self.margin_scale()))
    }
}

pub(crate) fn decide(score: f64, tau: f64, margin_scale: f64) -> GateDecision {
    GateDecision {
        score,
        pass: score >= tau,
        margin: (score - tau) / margin_scale,
    }
}

/// `(pass, margin)` for `x` under `gate`.
pub fn gate_pass(gate: &dyn Gate, x: &[f64]) -> Result<(bool, f64)> {
    let d = gate.evaluate(x)?;
    Ok((d.pass, d.margin))
}

pub(crate) fn check_query(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gate query"));
    }
    Ok(())
}

/// MAD of in-distribution scores, or 1 when that is zero.
pub(crate) fn margin_scale_from(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return 1.0;
    }
    let mad = crate::stats::median_abs_deviation(scores);
    if mad > 0.0 && mad.is_finite() {
        mad
    } else {
        1.0
    }
}

/// Which gate to build; also the JSON tag of [`GateModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Mahalanobis,
    Knn,
}

impl GateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GateKind::Mahalanobis => "mahalanobis",
            GateKind::Knn => "knn",
        }
    }
}

/// A fitted gate of any built-in kind; the serialized form of a gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GateModel {
    Mahalanobis(MahalanobisGate),
    Knn(KnnDensityGate),
}

impl GateModel {
    pub fn kind(&self) -> GateKind {
        match self {
            GateModel::Mahalanobis(_) => GateKind::Mahalanobis,
            GateModel::Knn(_) => GateKind::Knn,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GateModel::Mahalanobis(g) => g.dim(),
            GateModel::Knn(g) => g.dim(),
        }
    }

    /// Check internal consistency of a deserialized gate.
    pub fn validate(&self) -> Result<()> {
        match self {
            GateModel::Mahalanobis(g) => g.validate(),
            GateModel::Knn(g) => g.validate(),
        }
    }

    fn inner(&self) -> &dyn Gate {
        match self {
            GateModel::Mahalanobis(g) => g,
            GateModel::Knn(g) => g,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Gate {
        match self {
            GateModel::Mahalanobis(g) => g,
            GateModel::Knn(g) => g,
        }
    }
}

impl Gate for GateModel {
    fn name(&self) -> &str {
        self.inner().name()
    }

    fn score(&self, x: &[f64]) -> Result<f64> {
        self.inner().score(x)
    }

    fn threshold(&self) -> Option<f64> {
        self.inner().threshold()
    }

    fn set_threshold(&mut self, tau: f64) {
        self.inner_mut().set_threshold(tau)
    }

    fn margin_scale(&self) -> f64 {
        self.inner().margin_scale()
    }
}

/// Parse and validate a list of fitted gates.
pub fn gates_from_json(s: &str) -> Result<Vec<GateModel>> {
    let gates: Vec<GateModel> = serde_json::from_str(s)?;
    if let Some(first) = gates.first() {
        let dim = first.dim();
        for g in &gates {
            g.validate()?;
            if g.dim() != dim {
                return Err(Error::InvalidInput(
                    "gates disagree on dimensionality".into(),
                ));
            }
        }
    }
    Ok(gates)
}

pub(crate) fn check_threshold(tau: Option<f64>, margin_scale: f64) -> Result<()> {
    if let Some(t) = tau {
        if !t.is_finite() {
            return Err(Error::InvalidInput("non-finite gate threshold".into()));
        }
    }
    if !(margin_scale > 0.0 && margin_scale.is_finite()) {
        return Err(Error::InvalidInput("margin_scale must be positive".into()));
    }
    Ok(())
}
