//! Harvest quality measurement: a weighted linear probe trained on exported
//! training sets, precision-recall curves against planted truth, stratum
//! coverage, and the multi-arm ablation.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{Label, Standardizer};
use crate::ensemble::TrainingSet;
use crate::logistic::{fit_weighted, GdOptions, LogisticModel, Problem};
use crate::simhash::StratumTable;
use crate::{Error, Result};

mod ablation;

pub use ablation::{
    default_arms, run_ablation, AblationArm, AblationResults, AblationSpec, ArmRef, ArmResult,
    CohortRate, SamplerKind,
};

/// Linear fraud-vs-nonfraud model on features standardized with statistics
/// of its own training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub standardizer: Standardizer,
    pub model: LogisticModel,
}

impl Probe {
    /// Fraud probability for a raw feature vector.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let z = self.standardizer.transform(x)?;
        Ok(self.model.predict_proba(&z))
    }
}

/// Fit the probe on fraud (1) and nonfraud (0) rows, each row's loss scaled
/// by its weight. Suspicious and unlabeled rows are ignored.
pub fn train_probe(set: &TrainingSet, opts: &GdOptions) -> Result<Probe> {
    let rows: Vec<_> = set
        .rows
        .iter()
        .filter(|r| matches!(r.label, Label::Fraud | Label::NonFraud))
        .collect();
    let has = |l: Label| rows.iter().any(|r| r.label == l);
    if !has(Label::Fraud) || !has(Label::NonFraud) {
        return Err(Error::InvalidInput(
            "probe training needs at least one fraud and one nonfraud row".into(),
        ));
    }
    let standardizer = Standardizer::fit(rows.iter().map(|r| r.features.as_slice()), set.dim)?;
    let xs = rows
        .iter()
        .map(|r| standardizer.transform(&r.features).map(Vec::from))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<bool> = rows.iter().map(|r| r.label == Label::Fraud).collect();
    let weights: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    let model = fit_weighted(
        &Problem {
            xs: &xs,
            ys: &ys,
            weights: &weights,
        },
        opts,
    )?;
    Ok(Probe {
        standardizer,
        model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// No sample scored at or above the threshold; precision reported as 1.
    pub precision_undefined: bool,
}

/// Thresholds 0.00, 0.01, ..., 1.00.
pub fn default_pr_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Precision and recall of the rule `score >= threshold` at each grid point.
pub fn pr_curve(scores: &[f64], truth: &[bool], grid: &[f64]) -> Result<Vec<PRPoint>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: truth.len(),
        });
    }
    if scores.iter().chain(grid).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("score or threshold"));
    }
    let positives = truth.iter().filter(|t| **t).count();
    if positives == 0 {
        return Err(Error::InvalidInput(
            "evaluation set has no positives".into(),
        ));
    }
    Ok(grid
        .iter()
        .map(|&t| {
            let (mut tp, mut pp) = (0usize, 0usize);
            for (s, y) in scores.iter().zip(truth) {
                if *s >= t {
                    pp += 1;
                    tp += usize::from(*y);
                }
            }
            PRPoint {
                threshold: t,
                precision: if pp == 0 { 1.0 } else { tp as f64 / pp as f64 },
                recall: tp as f64 / positives as f64,
                precision_undefined: pp == 0,
            }
        })
        .collect())
}

/// Step-wise area under the PR points: `Σ (r_i − r_{i−1}) p_i` with points
/// ordered by increasing recall.
pub fn average_precision(points: &[PRPoint]) -> f64 {
    let mut pts: Vec<&PRPoint> = points.iter().collect();
    pts.sort_by(|a, b| {
        a.recall
            .total_cmp(&b.recall)
            .then(b.threshold.total_cmp(&a.threshold))
    });
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in pts {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    area
}

/// CSV with columns `threshold,precision,recall`.
pub fn pr_csv(points: &[PRPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        out.push_str(&format!(
            "{:?},{:?},{:?}\n",
            p.threshold, p.precision, p.recall
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCoverage {
    pub key: String,
    pub population: usize,
    pub sampled: usize,
    /// `sampled / population`.
    pub ratio: f64,
    /// `sampled >= min(floor, population)`.
    pub floor_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub floor: usize,
    pub buckets: Vec<BucketCoverage>,
    /// Fraction of nonempty buckets meeting the floor (1 when there are none).
    pub floor_fraction: f64,
}

impl CoverageReport {
    pub fn bucket(&self, key: &str) -> Option<&BucketCoverage> {
        self.buckets.iter().find(|b| b.key == key)
    }
}

pub fn coverage_report(
    table: &StratumTable,
    sampled: &[String],
    floor: usize,
) -> Result<CoverageReport> {
    let mut owner: HashMap<&str, &str> = HashMap::with_capacity(table.population());
    for (key, ids) in table.buckets() {
        for id in ids {
            owner.insert(id.as_str(), key.as_str());
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut seen = HashSet::new();
    for id in sampled {
        let key = owner.get(id.as_str()).ok_or_else(|| {
            Error::InvalidInput(format!("sampled id {id:?} is not in the stratum table"))
        })?;
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidInput(format!(
                "sampled id {id:?} appears twice"
            )));
        }
        *counts.entry(key).or_default() += 1;
    }
    let buckets: Vec<BucketCoverage> = table
        .buckets()
        .iter()
        .map(|(key, ids)| {
            let sampled = counts.get(key.as_str()).copied().unwrap_or(0);
            BucketCoverage {
                key: key.clone(),
                population: ids.len(),
                sampled,
                ratio: sampled as f64 / ids.len() as f64,
                floor_met: sampled >= floor.min(ids.len()),
            }
        })
        .collect();
    let floor_fraction = if buckets.is_empty() {
        1.0
    } else {
        buckets.iter().filter(|b| b.floor_met).count() as f64 / buckets.len() as f64
    };
    Ok(CoverageReport {
        floor,
        buckets,
        floor_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureVector;
    use crate::ensemble::TrainingRow;

    fn row(id: &str, label: Label, w: f64, x: f64) -> TrainingRow {
        TrainingRow {
            id: id.into(),
            label,
            weight: w,
            features: FeatureVector::new(vec![x]).unwrap(),
        }
    }

    #[test]
    fn probe_separates_toy() {
        let mut rows = Vec::new();
        for (i, x) in [5.0, 4.5, 5.5].iter().enumerate() {
            rows.push(row(&format!("f{i}"), Label::Fraud, 1.0, *x));
            rows.push(row(&format!("n{i}"), Label::NonFraud, 1.0, -x));
        }
        rows.push(row("s", Label::Suspicious, 1.0, 100.0));
        let set = TrainingSet { dim: 1, rows };
        let p = train_probe(&set, &GdOptions::default()).unwrap();
        for r in &set.rows[..6] {
            assert_eq!(p.score(&r.features).unwrap() > 0.5, r.label == Label::Fraud);
        }
    }

    #[test]
    fn probe_rejects_single_class() {
        let set = TrainingSet {
            dim: 1,
            rows: vec![
                row("a", Label::NonFraud, 1.0, 0.0),
                row("b", Label::Suspicious, 1.0, 1.0),
            ],
        };
        assert!(train_probe(&set, &GdOptions::default()).is_err());
    }

    #[test]
    fn perfect_scorer() {
        let scores = [0.9, 0.8, 0.1, 0.2];
        let truth = [true, true, false, false];
        let pts = pr_curve(&scores, &truth, &default_pr_grid()).unwrap();
        for p in &pts {
            if p.threshold <= 0.8 && p.threshold > 0.2 {
                assert_eq!((p.precision, p.recall), (1.0, 1.0));
            }
            assert!(p.threshold > 0.8 || p.recall == 1.0);
        }
        assert!((average_precision(&pts) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_scorer_gives_base_rate() {
        let scores = [0.5; 10];
        let truth = [
            true, false, false, false, false, false, false, false, false, false,
        ];
        let pts = pr_curve(&scores, &truth, &default_pr_grid()).unwrap();
        let defined: Vec<_> = pts.iter().filter(|p| !p.precision_undefined).collect();
        assert!(defined
            .iter()
            .all(|p| p.precision == 0.1 && p.recall == 1.0));
        assert!(pts
            .iter()
            .filter(|p| p.precision_undefined)
            .all(|p| p.precision == 1.0 && p.recall == 0.0));
    }

    #[test]
    fn pr_errors() {
        assert!(pr_curve(&[], &[], &[0.5]).is_err());
        assert!(pr_curve(&[0.1], &[false], &[0.5]).is_err());
        assert!(pr_curve(&[0.1, 0.2], &[true], &[0.5]).is_err());
    }

    fn table() -> StratumTable {
        let mut b = BTreeMap::new();
        b.insert(
            "00".to_string(),
            vec!["a".to_string(), "b".into(), "c".into()],
        );
        b.insert("11".to_string(), vec!["d".to_string()]);
        StratumTable::new(2, b).unwrap()
    }

    #[test]
    fn coverage_full_and_empty() {
        let t = table();
        let all: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let full = coverage_report(&t, &all, 2).unwrap();
        assert!(full.buckets.iter().all(|b| b.ratio == 1.0 && b.floor_met));
        let empty = coverage_report(&t, &[], 2).unwrap();
        assert!(empty.buckets.iter().all(|b| b.ratio == 0.0 && !b.floor_met));
        assert_eq!(empty.floor_fraction, 0.0);
        let part = coverage_report(&t, &["a".into(), "d".into()], 2).unwrap();
        assert_eq!(part.floor_fraction, 0.5);
        assert!(part.bucket("11").unwrap().floor_met);
    }

    #[test]
    fn coverage_rejects_foreign_ids() {
        assert!(coverage_report(&table(), &["zz".into()], 1).is_err());
        assert!(coverage_report(&table(), &["a".into(), "a".into()], 1).is_err());
    }
}
