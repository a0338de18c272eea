//! Dense Cholesky factorization and triangular solves.

use ndarray::{Array1, Array2};

/// Lower-triangular `L` with `L Lᵀ = a`, or `None` if `a` is not
/// numerically positive definite. Only the lower triangle of `a` is read.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !diag.is_finite() || diag <= 0.0 {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Some(l)
}

/// Solve `L z = b` for lower-triangular `L`.
pub fn forward_substitute(l: &Array2<f64>, b: &[f64]) -> Array1<f64> {
    let n = l.nrows();
    let mut z = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// Factor `a`, adding `eps * scale * I` for each `eps` of `ladder` in turn
/// until the factorization succeeds. Returns the factor, the jittered
/// matrix and the jitter actually added.
pub fn cholesky_with_jitter(
    a: &Array2<f64>,
    scale: f64,
    ladder: &[f64],
) -> Option<(Array2<f64>, Array2<f64>, f64)> {
    if let Some(l) = cholesky(a) {
        return Some((l, a.clone(), 0.0));
    }
    let n = a.nrows();
    for &eps in ladder {
        let jitter = eps * scale;
        if jitter.is_nan() || jitter <= 0.0 {
            continue;
        }
        let mut m = a.clone();
        for i in 0..n {
            m[[i, i]] += jitter;
        }
        if let Some(l) = cholesky(&m) {
            return Some((l, m, jitter));
        }
    }
    None
}
