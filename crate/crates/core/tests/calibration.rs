mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use sage_core::calibration::{
    confirm_on_test, select_threshold, split, sweep_thresholds, ContaminationEstimator, SplitSpec,
    SweepRow,
};
use sage_core::data::{FeatureVector, Label};
use sage_core::datagen::{generate, scenarios, TruthRow, TruthTable};
use sage_core::ensemble::{Candidate, VotingPolicy};
use sage_core::gates::{fit_knn, GateModel};
use sage_core::pipeline::{stage_calibrate, stage_stratify, PipelineConfig};

fn row(q: f64, tau: f64, c: f64, y: usize) -> SweepRow {
    SweepRow {
        q,
        tau,
        contamination: c,
        empty: y == 0,
        yield_count: y,
    }
}

#[test]
fn split_sizes_and_determinism() {
    let data = common::dataset(
        1,
        (0..100)
            .map(|i| (Label::Unlabeled, vec![i as f64]))
            .collect(),
    );
    let spec = SplitSpec::new(0.2, 0.2, 9).unwrap();
    let s = split(&data, &spec, &[Label::Unlabeled]).unwrap();
    assert_eq!(
        (s.fit.len(), s.validation.len(), s.test.len()),
        (60, 20, 20)
    );
    assert_eq!(s, split(&data, &spec, &[Label::Unlabeled]).unwrap());
    s.assert_disjoint().unwrap();
    assert!(SplitSpec::new(0.6, 0.6, 0).is_err());
    assert!(split(&data, &spec, &[Label::Fraud]).is_err());
}

#[test]
fn selection_rules() {
    let rows = vec![
        row(0.1, 1.0, 0.005, 90),
        row(0.5, 2.0, 0.001, 50),
        row(0.9, 3.0, 0.0, 10),
    ];
    let s = select_threshold(&rows, 0.01).unwrap();
    assert_eq!((s.q, s.constraint_met), (0.1, true));
    let s = select_threshold(&rows, 0.0001).unwrap();
    assert_eq!((s.tau, s.constraint_met), (3.0, true));
    let bad = vec![
        row(0.1, 1.0, 0.3, 90),
        row(0.5, 2.0, 0.2, 50),
        row(0.9, 3.0, 0.2, 10),
    ];
    let s = select_threshold(&bad, 0.01).unwrap();
    assert_eq!((s.tau, s.constraint_met), (2.0, false));
}

fn knn_and_candidates() -> (GateModel, Vec<Candidate>, TruthTable) {
    let fraud: Vec<Vec<f64>> = (0..20).map(|i| vec![10.0 + i as f64 * 0.01, 0.0]).collect();
    let g = GateModel::Knn(fit_knn(&fraud, 2).unwrap());
    let cands: Vec<Candidate> = (0..50)
        .map(|i| Candidate {
            id: format!("v{i:03}"),
            x: FeatureVector::new(vec![i as f64 * 0.2, 0.0]).unwrap(),
        })
        .collect();
    let truth = TruthTable::from_rows(
        cands
            .iter()
            .map(|c| TruthRow {
                id: c.id.clone(),
                truth: if c.x[0] > 9.0 {
                    Label::Fraud
                } else {
                    Label::NonFraud
                },
                cohort: "x".into(),
            })
            .collect(),
    )
    .unwrap();
    (g, cands, truth)
}

#[test]
fn sweep_at_zero_accepts_everything_at_base_rate() {
    let (g, cands, truth) = knn_and_candidates();
    let est = ContaminationEstimator::true_label(&truth);
    let rows = sweep_thresholds(&g, &cands, &[0.0, 0.5], &est).unwrap();
    assert_eq!(rows[0].yield_count, cands.len());
    let base = cands.iter().filter(|c| c.x[0] > 9.0).count() as f64 / cands.len() as f64;
    assert!((rows[0].contamination - base).abs() < 1e-12);
    assert!(sweep_thresholds(&g, &[], &[0.5], &est).is_err());
}

#[test]
fn confirm_rejects_overlap_and_empty() {
    let (mut g, cands, truth) = knn_and_candidates();
    use sage_core::gates::Gate;
    g.set_threshold(f64::MAX);
    let est = ContaminationEstimator::true_label(&truth);
    let policy = VotingPolicy::unanimous(1).unwrap();
    let none = HashSet::new();
    let r = confirm_on_test(
        std::slice::from_ref(&g),
        &policy,
        &cands,
        &none,
        &est,
        None,
        0.01,
    )
    .unwrap();
    assert!(r.empty && r.yield_count == 0);
    let overlap: HashSet<&str> = [cands[0].id.as_str()].into();
    assert!(confirm_on_test(
        std::slice::from_ref(&g),
        &policy,
        &cands,
        &overlap,
        &est,
        None,
        0.01
    )
    .is_err());
    assert!(confirm_on_test(
        std::slice::from_ref(&g),
        &policy,
        &[],
        &none,
        &est,
        None,
        0.01
    )
    .is_err());
}

proptest! {
    #[test]
    fn tau_rises_and_yield_falls_with_q(xs in prop::collection::vec(-10.0f64..10.0, 1..80), steps in prop::collection::vec(0.001f64..0.2, 1..10)) {
        let (g, _, _) = knn_and_candidates();
        let cands: Vec<Candidate> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Candidate { id: format!("p{i:03}"), x: FeatureVector::new(vec![*x, -x]).unwrap() })
            .collect();
        let truth = TruthTable::from_rows(
            cands.iter().map(|c| TruthRow { id: c.id.clone(), truth: Label::NonFraud, cohort: "x".into() }).collect(),
        ).unwrap();
        let mut grid = Vec::new();
        let mut q = 0.0;
        for s in steps {
            q += s;
            if q >= 1.0 { break; }
            grid.push(q);
        }
        prop_assume!(!grid.is_empty());
        let rows = sweep_thresholds(&g, &cands, &grid, &ContaminationEstimator::true_label(&truth)).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].tau >= w[0].tau);
            prop_assert!(w[1].yield_count <= w[0].yield_count);
        }
    }
}

fn s1_config(estimator: &str) -> PipelineConfig {
    common::pipeline_config(20_000, 0, estimator)
}

#[test]
fn probes_agree_with_true_label_on_separated_scenario() {
    let g = generate(&scenarios::s1(50_000, 21)).unwrap();
    let base = s1_config(common::TRUE_LABEL);
    let strat = stage_stratify(&base, &g.dataset).unwrap();
    let run = |est: &str| {
        stage_calibrate(
            &s1_config(est),
            &g.dataset,
            Some(&g.truth),
            &strat.standardizer,
            &strat.sample,
        )
        .unwrap()
        .report
        .unwrap()
    };
    let truth = run(common::TRUE_LABEL);
    let test = truth.test.as_ref().unwrap();
    assert!(test.contamination < 0.01, "{test:?}");
    for est in [
        r#"{"method": "distance-probe"}"#,
        r#"{"method": "regression-probe"}"#,
    ] {
        let probe = run(est);
        for (gt, gp) in truth.gates.iter().zip(&probe.gates) {
            for (rt, rp) in gt.rows.iter().zip(&gp.rows) {
                assert_eq!(rt.tau, rp.tau);
                assert!(
                    (rt.contamination - rp.contamination).abs() <= 0.05,
                    "{est} gate {} q {}: {} vs {}",
                    gt.gate,
                    rt.q,
                    rp.contamination,
                    rt.contamination
                );
            }
        }
    }
}
