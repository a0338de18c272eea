//! Weighted logistic regression fitted by deterministic full-batch
//! gradient descent. Used as the contamination probe during calibration and
//! as the training-set quality probe in ablations.

use serde::{Deserialize, Serialize};

use crate::stats::logistic;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdOptions {
    pub iterations: usize,
    pub step: f64,
}

impl Default for GdOptions {
    fn default() -> Self {
        GdOptions {
            iterations: 500,
            step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        LogisticModel {
            coef: vec![0.0; dim],
            intercept: 0.0,
        }
    }

    pub fn from_params(params: &[f64]) -> Self {
        let (coef, b) = params.split_at(params.len() - 1);
        LogisticModel {
            coef: coef.to_vec(),
            intercept: b[0],
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.coef.clone();
        p.push(self.intercept);
        p
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.coef.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.intercept
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        logistic(self.decision(x))
    }
}

/// Training rows for the weighted objective.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub xs: &'a [Vec<f64>],
    pub ys: &'a [bool],
    pub weights: &'a [f64],
}

impl Problem<'_> {
    fn validate(&self) -> Result<usize> {
        let n = self.xs.len();
        if n == 0 || self.ys.len() != n || self.weights.len() != n {
            return Err(Error::InvalidInput(
                "empty or ragged logistic problem".into(),
            ));
        }
        if !self.ys.iter().any(|y| *y) || self.ys.iter().all(|y| *y) {
            return Err(Error::InvalidInput(
                "logistic probe needs both classes".into(),
            ));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput("row weights must be positive".into()));
        }
        let dim = self.xs[0].len();
        if self.xs.iter().any(|x| x.len() != dim) {
            return Err(Error::InvalidInput("ragged feature rows".into()));
        }
        Ok(dim)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Weighted mean cross-entropy `Σ wᵢ ℓᵢ / Σ wᵢ` and its gradient with
/// respect to `params = [coef..., intercept]`.
pub fn loss_and_gradient(params: &[f64], problem: &Problem<'_>) -> (f64, Vec<f64>) {
    let dim = params.len() - 1;
    let model = LogisticModel::from_params(params);
    let total_w: f64 = problem.weights.iter().sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim + 1];
    for ((x, &y), &w) in problem.xs.iter().zip(problem.ys).zip(problem.weights) {
        let z = model.decision(x);
        let yf = if y { 1.0 } else { 0.0 };
        loss += w * (softplus(z) - yf * z);
        let r = w * (logistic(z) - yf);
        for (g, v) in grad.iter_mut().zip(x) {
            *g += r * v;
        }
        grad[dim] += r;
    }
    grad.iter_mut().for_each(|g| *g /= total_w);
    (loss / total_w, grad)
}

/// Gradient descent from the zero vector for a fixed number of steps.
pub fn fit_weighted(problem: &Problem<'_>, opts: &GdOptions) -> Result<LogisticModel> {
    let dim = problem.validate()?;
    let mut params = vec![0.0; dim + 1];
    for _ in 0..opts.iterations {
        let (_, g) = loss_and_gradient(&params, problem);
        for (p, gi) in params.iter_mut().zip(&g) {
            *p -= opts.step * gi;
        }
    }
    Ok(LogisticModel::from_params(&params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        let xs: Vec<Vec<f64>> = [5.0, 4.5, 5.5, -5.0, -4.5, -5.5]
            .iter()
            .map(|v| vec![*v])
            .collect();
        let ys = vec![true, true, true, false, false, false];
        (xs, ys)
    }

    #[test]
    fn separable_toy_is_classified_perfectly() {
        let (xs, ys) = toy();
        let w = vec![1.0; 6];
        let m = fit_weighted(
            &Problem {
                xs: &xs,
                ys: &ys,
                weights: &w,
            },
            &GdOptions::default(),
        )
        .unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(m.predict_proba(x) > 0.5, *y);
        }
    }

    #[test]
    fn uniform_weight_scaling_is_invisible() {
        let (xs, ys) = toy();
        let w1: Vec<f64> = vec![0.3, 1.0, 0.7, 1.0, 0.2, 0.9];
        let w2: Vec<f64> = w1.iter().map(|w| 2.0 * w).collect();
        let opts = GdOptions {
            iterations: 50,
            step: 0.1,
        };
        let a = fit_weighted(
            &Problem {
                xs: &xs,
                ys: &ys,
                weights: &w1,
            },
            &opts,
        )
        .unwrap();
        let b = fit_weighted(
            &Problem {
                xs: &xs,
                ys: &ys,
                weights: &w2,
            },
            &opts,
        )
        .unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let xs = vec![vec![1.0], vec![2.0]];
        let ys = vec![true, true];
        let w = vec![1.0; 2];
        assert!(fit_weighted(
            &Problem {
                xs: &xs,
                ys: &ys,
                weights: &w
            },
            &GdOptions::default()
        )
        .is_err());
    }

    #[test]
    fn zero_params_loss_is_ln2() {
        let (xs, ys) = toy();
        let w = vec![1.0; 6];
        let (loss, _) = loss_and_gradient(
            &[0.0, 0.0],
            &Problem {
                xs: &xs,
                ys: &ys,
                weights: &w,
            },
        );
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
