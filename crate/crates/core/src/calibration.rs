//! Threshold calibration: deterministic label-stratified splits, per-gate
//! quantile sweeps on validation candidates, contamination estimators,
//! constrained threshold selection and a held-out confirmation of the
//! combined voting policy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::datagen::TruthTable;
use crate::ensemble::{harvest, Candidate, VotingPolicy};
use crate::gates::{Gate, GateModel, MahalanobisGate};
use crate::logistic::LogisticModel;
use crate::stats::quantile_sorted;
use crate::{Error, Result};

/// Validation and test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSplit")]
pub struct SplitSpec {
    validation_fraction: f64,
    test_fraction: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct RawSplit {
    validation_fraction: f64,
    test_fraction: f64,
    seed: u64,
}

impl TryFrom<RawSplit> for SplitSpec {
    type Error = Error;

    fn try_from(r: RawSplit) -> Result<Self> {
        SplitSpec::new(r.validation_fraction, r.test_fraction, r.seed)
    }
}

impl SplitSpec {
    pub fn new(validation_fraction: f64, test_fraction: f64, seed: u64) -> Result<Self> {
        let ok = validation_fraction > 0.0
            && test_fraction > 0.0
            && validation_fraction + test_fraction < 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "split fractions must be positive with sum < 1, got {validation_fraction} and {test_fraction}"
            )));
        }
        Ok(SplitSpec {
            validation_fraction,
            test_fraction,
            seed,
        })
    }

    pub fn validation_fraction(&self) -> f64 {
        self.validation_fraction
    }

    pub fn test_fraction(&self) -> f64 {
        self.test_fraction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Disjoint id sets; each list is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub fit: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn assert_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.fit.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Protocol(format!(
                    "id {id:?} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

/// Split `data` per label: within each label group ids are sorted, shuffled
/// with a generator seeded from the spec seed and the label, and cut into
/// rounded validation and test shares with the remainder going to fit.
/// Every label in `required` must end up non-empty in all three splits.
pub fn split(data: &Dataset, spec: &SplitSpec, required: &[Label]) -> Result<Splits> {
    let mut groups: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    for s in data.samples() {
        groups.entry(s.label).or_default().push(&s.id);
    }
    let mut out = Splits {
        fit: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (label, mut ids) in groups {
        ids.sort_unstable();
        let mut rng =
            ChaCha8Rng::seed_from_u64(spec.seed ^ crate::stats::fnv1a64(label.as_str().as_bytes()));
        ids.shuffle(&mut rng);
        let n = ids.len() as f64;
        let n_val = (n * spec.validation_fraction).round() as usize;
        let n_test = ((n * spec.test_fraction).round() as usize).min(ids.len() - n_val);
        let (val, rest) = ids.split_at(n_val);
        let (test, fit) = rest.split_at(n_test);
        if required.contains(&label) && (val.is_empty() || test.is_empty() || fit.is_empty()) {
            return Err(Error::InvalidInput(format!(
                "label {label} has too few samples ({}) for a three-way split",
                ids.len()
            )));
        }
        out.validation.extend(val.iter().map(|s| s.to_string()));
        out.test.extend(test.iter().map(|s| s.to_string()));
        out.fit.extend(fit.iter().map(|s| s.to_string()));
    }
    for req in required {
        if !data.samples().iter().any(|s| s.label == *req) {
            return Err(Error::InvalidInput(format!(
                "no samples with required label {req}"
            )));
        }
    }
    out.fit.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Which contamination estimator to use; the configuration-level choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum EstimatorKind {
    TrueLabel,
    DistanceProbe {
        #[serde(default = "default_probe_quantile")]
        radius_quantile: f64,
    },
    RegressionProbe,
}

fn default_probe_quantile() -> f64 {
    0.99
}

impl Default for EstimatorKind {
    fn default() -> Self {
        EstimatorKind::DistanceProbe {
            radius_quantile: default_probe_quantile(),
        }
    }
}

/// A contamination estimator with its prerequisites in hand.
#[derive(Debug, Clone)]
pub enum ContaminationEstimator {
    /// Exact count of planted fraud among accepted ids.
    TrueLabel(HashMap<String, Label>),
    /// Fraction of accepted samples closer to the fraud center than `radius`.
    DistanceProbe { gate: MahalanobisGate, radius: f64 },
    /// Fraction of accepted samples a fraud-vs-nonfraud logistic probe
    /// calls fraud (probability above 0.5).
    RegressionProbe(LogisticModel),
}

impl ContaminationEstimator {
    pub fn true_label(truth: &TruthTable) -> Self {
        ContaminationEstimator::TrueLabel(
            truth
                .rows()
                .iter()
                .map(|r| (r.id.clone(), r.truth))
                .collect(),
        )
    }

    /// `radius` is the `radius_quantile` of the gate's scores over
    /// `fraud_probe` (held-out fraud vectors).
    pub fn distance_probe<R: AsRef<[f64]>>(
        gate: MahalanobisGate,
        fraud_probe: &[R],
        radius_quantile: f64,
    ) -> Result<Self> {
        if fraud_probe.is_empty() {
            return Err(Error::InvalidInput(
                "distance probe needs fraud samples".into(),
            ));
        }
        if !(0.0..=1.0).contains(&radius_quantile) {
            return Err(Error::Config("probe radius quantile outside [0, 1]".into()));
        }
        let mut scores = fraud_probe
            .iter()
            .map(|x| gate.score(x.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        scores.sort_by(f64::total_cmp);
        let radius = quantile_sorted(&scores, radius_quantile);
        Ok(ContaminationEstimator::DistanceProbe { gate, radius })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ContaminationEstimator::TrueLabel(_) => "true-label",
            ContaminationEstimator::DistanceProbe { .. } => "distance-probe",
            ContaminationEstimator::RegressionProbe(_) => "regression-probe",
        }
    }

    pub fn estimate(&self, accepted: &[&Candidate]) -> Result<Contamination> {
        if accepted.is_empty() {
            return Ok(Contamination {
                rate: 0.0,
                count: 0,
                empty: true,
            });
        }
        let mut count = 0usize;
        for c in accepted {
            let hit = match self {
                ContaminationEstimator::TrueLabel(truth) => {
                    let t = truth.get(&c.id).ok_or_else(|| {
                        Error::InvalidInput(format!("no ground truth for id {:?}", c.id))
                    })?;
                    *t == Label::Fraud
                }
                ContaminationEstimator::DistanceProbe { gate, radius } => {
                    gate.score(&c.x)? < *radius
                }
                ContaminationEstimator::RegressionProbe(m) => m.predict_proba(&c.x) > 0.5,
            };
            count += usize::from(hit);
        }
        Ok(Contamination {
            rate: count as f64 / accepted.len() as f64,
            count,
            empty: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub rate: f64,
    /// Number of accepted samples counted as contaminating.
    pub count: usize,
    /// Nothing was accepted; `rate` is 0 by convention.
    pub empty: bool,
}

pub fn estimate_contamination(
    accepted: &[&Candidate],
    estimator: &ContaminationEstimator,
) -> Result<Contamination> {
    estimator.estimate(accepted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub q: f64,
    pub tau: f64,
    pub contamination: f64,
    pub empty: bool,
    #[serde(rename = "yield")]
    pub yield_count: usize,
}

/// Check a quantile grid: values in `[0, 1)` and strictly increasing.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    if grid.iter().any(|q| !(0.0..1.0).contains(q)) {
        return Err(Error::Config(
            "threshold grid values must lie in [0, 1)".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "threshold grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// The default 19-point grid 0.05, 0.10, ..., 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// Score `validation` once, then for each grid quantile `q` set
/// `τ(q)` to the q-quantile of those scores and measure the accept set
/// `{score ≥ τ(q)}`.
pub fn sweep_thresholds(
    gate: &GateModel,
    validation: &[Candidate],
    grid: &[f64],
    estimator: &ContaminationEstimator,
) -> Result<Vec<SweepRow>> {
    if validation.is_empty() {
        return Err(Error::InvalidInput("empty validation set".into()));
    }
    validate_grid(grid)?;
    let scores = validation
        .iter()
        .map(|c| gate.score(&c.x))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    grid.iter()
        .map(|&q| {
            let tau = quantile_sorted(&sorted, q);
            let accepted: Vec<&Candidate> = validation
                .iter()
                .zip(&scores)
                .filter(|(_, s)| **s >= tau)
                .map(|(c, _)| c)
                .collect();
            let c = estimator.estimate(&accepted)?;
            Ok(SweepRow {
                q,
                tau,
                contamination: c.rate,
                empty: c.empty,
                yield_count: accepted.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub q: f64,
    pub tau: f64,
    pub contamination: f64,
    #[serde(rename = "yield")]
    pub yield_count: usize,
    pub constraint_met: bool,
}

/// Lowest threshold meeting `max_contamination`; failing that, the
/// minimum-contamination row (smaller τ on ties) flagged as unmet.
pub fn select_threshold(rows: &[SweepRow], max_contamination: f64) -> Result<Selection> {
    let pick = |r: &SweepRow, met| Selection {
        q: r.q,
        tau: r.tau,
        contamination: r.contamination,
        yield_count: r.yield_count,
        constraint_met: met,
    };
    if let Some(r) = rows
        .iter()
        .filter(|r| r.contamination <= max_contamination)
        .min_by(|a, b| a.tau.total_cmp(&b.tau))
    {
        return Ok(pick(r, true));
    }
    rows.iter()
        .min_by(|a, b| {
            a.contamination
                .total_cmp(&b.contamination)
                .then(a.tau.total_cmp(&b.tau))
        })
        .map(|r| pick(r, false))
        .ok_or_else(|| Error::InvalidInput("no sweep rows to select from".into()))
}

/// Select per gate, in the order given.
pub fn select_thresholds(
    reports: &[Vec<SweepRow>],
    max_contamination: f64,
) -> Result<Vec<Selection>> {
    reports
        .iter()
        .map(|rows| select_threshold(rows, max_contamination))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmReport {
    pub estimator: String,
    pub scanned: usize,
    #[serde(rename = "yield")]
    pub yield_count: usize,
    pub contamination: f64,
    pub empty: bool,
    /// Exact contamination when ground truth is available.
    pub true_contamination: Option<f64>,
    pub max_contamination: f64,
    pub passed: bool,
}

/// Run the full voting ensemble on held-out `test` candidates. Fails with a
/// protocol error if any test id was also used for validation.
pub fn confirm_on_test(
    gates: &[GateModel],
    policy: &VotingPolicy,
    test: &[Candidate],
    validation_ids: &HashSet<&str>,
    estimator: &ContaminationEstimator,
    truth: Option<&ContaminationEstimator>,
    max_contamination: f64,
) -> Result<ConfirmReport> {
    if test.is_empty() {
        return Err(Error::Protocol("empty test candidate set".into()));
    }
    if let Some(c) = test.iter().find(|c| validation_ids.contains(c.id.as_str())) {
        return Err(Error::Protocol(format!(
            "test candidate {:?} was also used for validation",
            c.id
        )));
    }
    let h = harvest(test, gates, policy)?;
    let accepted_ids: HashSet<&str> = h.accepted_ids().into_iter().collect();
    let accepted: Vec<&Candidate> = test
        .iter()
        .filter(|c| accepted_ids.contains(c.id.as_str()))
        .collect();
    let c = estimator.estimate(&accepted)?;
    let true_contamination = truth
        .map(|t| t.estimate(&accepted))
        .transpose()?
        .map(|t| t.rate);
    Ok(ConfirmReport {
        estimator: estimator.name().to_string(),
        scanned: test.len(),
        yield_count: accepted.len(),
        contamination: c.rate,
        empty: c.empty,
        true_contamination,
        max_contamination,
        passed: c.rate <= max_contamination,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateCalibration {
    pub gate: String,
    pub rows: Vec<SweepRow>,
    pub chosen: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub estimator: String,
    pub max_contamination: f64,
    pub gates: Vec<GateCalibration>,
    pub test: Option<ConfirmReport>,
}

impl CalibrationReport {
    /// CSV with columns `gate,q,tau,contamination,yield`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gate,q,tau,contamination,yield\n");
        for g in &self.gates {
            for r in &g.rows {
                let _ = writeln!(
                    out,
                    "{},{:?},{:?},{:?},{}",
                    g.gate, r.q, r.tau, r.contamination, r.yield_count
                );
            }
        }
        out
    }
}

/// Sweep and select for every gate, writing the chosen τ into each gate.
pub fn calibrate_gates(
    gates: &mut [GateModel],
    validation: &[Candidate],
    grid: &[f64],
    estimator: &ContaminationEstimator,
    max_contamination: f64,
) -> Result<CalibrationReport> {
    let mut out = Vec::with_capacity(gates.len());
    for g in gates.iter_mut() {
        let rows = sweep_thresholds(g, validation, grid, estimator)?;
        let chosen = select_threshold(&rows, max_contamination)?;
        g.set_threshold(chosen.tau);
        out.push(GateCalibration {
            gate: g.name().to_string(),
            rows,
            chosen,
        });
    }
    Ok(CalibrationReport {
        estimator: estimator.name().to_string(),
        max_contamination,
        gates: out,
        test: None,
    })
}
