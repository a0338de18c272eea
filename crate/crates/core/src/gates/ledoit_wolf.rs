//! Ledoit-Wolf shrinkage toward a scaled identity.
//!
//! With centered rows `y_i` and `S = (1/n) Σ y_i y_iᵀ`:
//!
//! ```text
//! m   = tr(S) / d
//! d²  = ‖S − m I‖²_F / d
//! b̄²  = (1 / (n² d)) Σ_i ‖y_i y_iᵀ − S‖²_F
//! b²  = min(b̄², d²)
//! ρ   = b² / d²           (0 when d² = 0)
//! Σ*  = ρ m I + (1 − ρ) S
//! ```

use ndarray::Array2;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LedoitWolf {
    /// Shrunk covariance Σ*.
    pub covariance: Array2<f64>,
    /// Shrinkage intensity ρ ∈ [0, 1].
    pub shrinkage: f64,
    /// Mean eigenvalue m = tr(S)/d, the scale of the identity target.
    pub target_scale: f64,
    /// Unshrunk sample covariance S.
    pub sample_covariance: Array2<f64>,
}

/// Shrinkage estimate from already-centered rows. Accumulation runs in a
/// fixed sequential order so results are bit-reproducible.
pub fn ledoit_wolf<R: AsRef<[f64]>>(centered: &[R]) -> Result<LedoitWolf> {
    let n = centered.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "Ledoit-Wolf needs at least 2 samples, got {n}"
        )));
    }
    let d = centered[0].as_ref().len();
    if d == 0 {
        return Err(Error::InvalidInput("zero-dimensional samples".into()));
    }
    for y in centered {
        let y = y.as_ref();
        if y.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Ledoit-Wolf input"));
        }
    }

    let nf = n as f64;
    let df = d as f64;
    let mut s = Array2::<f64>::zeros((d, d));
    for y in centered {
        let y = y.as_ref();
        for i in 0..d {
            for j in 0..d {
                s[[i, j]] += y[i] * y[j];
            }
        }
    }
    s.mapv_inplace(|v| v / nf);

    let m = (0..d).map(|i| s[[i, i]]).sum::<f64>() / df;

    let mut dist2 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let t = if i == j { m } else { 0.0 };
            dist2 += (s[[i, j]] - t) * (s[[i, j]] - t);
        }
    }
    dist2 /= df;

    let mut bbar2 = 0.0;
    for y in centered {
        let y = y.as_ref();
        let mut frob = 0.0;
        for i in 0..d {
            for j in 0..d {
                let e = y[i] * y[j] - s[[i, j]];
                frob += e * e;
            }
        }
        bbar2 += frob;
    }
    bbar2 /= nf * nf * df;

    let b2 = bbar2.min(dist2);
    let rho = if dist2 > 0.0 {
        (b2 / dist2).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let mut sigma = s.mapv(|v| (1.0 - rho) * v);
    for i in 0..d {
        sigma[[i, i]] += rho * m;
    }
    Ok(LedoitWolf {
        covariance: sigma,
        shrinkage: rho,
        target_scale: m,
        sample_covariance: s,
    })
}

/// Center rows on their column means; returns the mean and centered rows.
pub fn center<R: AsRef<[f64]>>(rows: &[R]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centered = rows
        .iter()
        .map(|r| r.as_ref().iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    (mean, centered)
}
