use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use proptest::prelude::*;
use sage_core::gates::{
    center, cholesky, fit_knn, fit_mahalanobis, ledoit_wolf, Gate, MahalanobisGate,
    DEFAULT_JITTER_LADDER,
};

fn rows(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n)
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

fn exact_gate(mu: Vec<f64>, sigma: Array2<f64>) -> MahalanobisGate {
    let chol = cholesky(&sigma).expect("SPD");
    MahalanobisGate {
        mu,
        sigma_star: sigma,
        chol,
        rho: 0.0,
        jitter: 0.0,
        tau: None,
        margin_scale: 1.0,
    }
}

fn sample_cov(xs: &[Vec<f64>]) -> (Vec<f64>, Array2<f64>) {
    let (mu, c) = center(xs);
    let d = mu.len();
    let mut s = Array2::zeros((d, d));
    for y in &c {
        for i in 0..d {
            for j in 0..d {
                s[[i, j]] += y[i] * y[j] / xs.len() as f64;
            }
        }
    }
    (mu, s)
}

/// Random SPD matrix `B Bᵀ + d I` for d ≤ 16.
fn spd() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=16).prop_flat_map(|d| {
        (
            Just(d),
            prop::collection::vec(-2.0f64..2.0, d * d),
            prop::collection::vec(-5.0f64..5.0, d),
            prop::collection::vec(-5.0f64..5.0, d),
        )
    })
}

proptest! {
    #[test]
    fn shrinkage_in_unit_interval_and_spectrum_bounded(xs in rows(2..40, 4)) {
        let (_, c) = center(&xs);
        let lw = match ledoit_wolf(&c) {
            Ok(lw) => lw,
            Err(_) => return Ok(()),
        };
        prop_assert!((0.0..=1.0).contains(&lw.shrinkage));
        if lw.shrinkage > 0.0 {
            let s = to_na(&lw.sample_covariance).symmetric_eigen();
            let t = to_na(&lw.covariance).symmetric_eigen();
            // S is PSD; a slightly negative computed eigenvalue is rounding
            let lmin = s.eigenvalues.min().max(0.0);
            let bound = (1.0 - lw.shrinkage) * lmin + lw.shrinkage * lw.target_scale;
            prop_assert!(t.eigenvalues.min() >= bound - 1e-9 * (1.0 + bound.abs()));
            prop_assert!(bound > 0.0);
        }
    }

    #[test]
    fn forward_substitution_matches_explicit_inverse((d, b, mu, x) in spd()) {
        let bm = DMatrix::from_row_slice(d, d, &b);
        let sigma = &bm * bm.transpose() + DMatrix::identity(d, d) * d as f64;
        let arr = Array2::from_shape_fn((d, d), |(i, j)| sigma[(i, j)]);
        let gate = exact_gate(mu.clone(), arr);
        let diff = DVector::from_iterator(d, x.iter().zip(&mu).map(|(a, m)| a - m));
        let oracle = (diff.transpose() * sigma.try_inverse().unwrap() * &diff)[(0, 0)].sqrt();
        let got = gate.score(&x).unwrap();
        prop_assert!((got - oracle).abs() <= 1e-8 * oracle.max(1e-12), "{got} vs {oracle}");
    }

    #[test]
    fn score_invariant_under_affine_maps(
        xs in rows(12..30, 3),
        a in prop::collection::vec(-2.0f64..2.0, 9),
        shift in prop::collection::vec(-5.0f64..5.0, 3),
        q in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let am = DMatrix::from_row_slice(3, 3, &a) + DMatrix::identity(3, 3) * 3.0;
        prop_assume!(am.determinant().abs() > 1e-3);
        let map = |v: &[f64]| -> Vec<f64> {
            let y = &am * DVector::from_column_slice(v);
            (0..3).map(|i| y[i] + shift[i]).collect()
        };
        let (mu, s) = sample_cov(&xs);
        prop_assume!(to_na(&s).symmetric_eigen().eigenvalues.min() > 1e-6);
        let ys: Vec<Vec<f64>> = xs.iter().map(|v| map(v)).collect();
        let (mu2, s2) = sample_cov(&ys);
        let g1 = exact_gate(mu, s);
        let g2 = exact_gate(mu2, s2);
        let a1 = g1.score(&q).unwrap();
        let a2 = g2.score(&map(&q)).unwrap();
        prop_assert!((a1 - a2).abs() <= 1e-6 * (1.0 + a1), "{a1} vs {a2}");
    }

    #[test]
    fn knn_is_kth_order_statistic(refs in rows(1..200, 3), q in prop::collection::vec(-10.0f64..10.0, 3), kf in 0.0f64..1.0) {
        let k = 1 + ((refs.len() - 1) as f64 * kf) as usize;
        let gate = fit_knn(&refs, k).unwrap();
        let mut d: Vec<f64> = refs
            .iter()
            .map(|r| r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        d.sort_by(f64::total_cmp);
        prop_assert_eq!(gate.score(&q).unwrap(), d[k - 1]);
    }

    #[test]
    fn raising_tau_never_admits(xs in rows(10..30, 3), q in prop::collection::vec(-10.0f64..10.0, 3), t1 in 0.0f64..10.0, dt in 0.0f64..10.0) {
        let mut m = fit_mahalanobis(&xs, &DEFAULT_JITTER_LADDER).unwrap();
        let mut k = fit_knn(&xs, 3).unwrap();
        let check = |g: &mut dyn Gate| -> Result<(), TestCaseError> {
            g.set_threshold(t1 + dt);
            let hi = g.evaluate(&q).unwrap().pass;
            g.set_threshold(t1);
            let lo = g.evaluate(&q).unwrap().pass;
            prop_assert!(!hi || lo);
            Ok(())
        };
        check(&mut m)?;
        check(&mut k)?;
    }
}

#[test]
fn degenerate_fraud_set_is_rejected_or_regularized() {
    let same = vec![vec![1.0, 2.0, 3.0]; 10];
    match fit_mahalanobis(&same, &DEFAULT_JITTER_LADDER) {
        Ok(g) => assert!(g.score(&[1.0, 2.0, 3.0]).unwrap().is_finite()),
        Err(e) => assert!(e.to_string().contains("numerical"), "{e}"),
    }
}
