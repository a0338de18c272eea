use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    average_precision, coverage_report, default_pr_grid, pr_csv, pr_curve, train_probe, PRPoint,
    Probe,
};
use crate::data::Label;
use crate::datagen::{generate, Generated, ScenarioConfig};
use crate::gates::GateKind;
use crate::logistic::GdOptions;
use crate::pipeline::{execute, PipelineConfig, RunOutputs};
use crate::{Error, Result};

pub use crate::pipeline::SamplerKind;

/// One sampler and gate combination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationArm {
    pub name: String,
    pub sampler: SamplerKind,
    /// Empty for sampler-only arms, which accept every drawn candidate.
    pub gates: Vec<GateKind>,
    /// Votes needed; unanimous when absent.
    #[serde(default)]
    pub required_votes: Option<usize>,
}

impl AblationArm {
    fn new(name: &str, sampler: SamplerKind, gates: &[GateKind]) -> Self {
        AblationArm {
            name: name.into(),
            sampler,
            gates: gates.to_vec(),
            required_votes: None,
        }
    }

    fn config(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        cfg.sampler.kind = self.sampler;
        cfg.gates.enabled = self.gates.clone();
        cfg.policy.required_votes = self.required_votes;
        cfg
    }

    fn is_unanimous(&self) -> bool {
        self.required_votes.is_none_or(|k| k == self.gates.len())
    }
}

/// The six default arms.
pub fn default_arms() -> Vec<AblationArm> {
    use GateKind::{Knn, Mahalanobis};
    use SamplerKind::{Random, SimhashFloors};
    vec![
        AblationArm::new("random-sampler", Random, &[]),
        AblationArm::new("simhash-only", SimhashFloors, &[]),
        AblationArm::new("mahalanobis-only", Random, &[Mahalanobis]),
        AblationArm::new("knn-only", Random, &[Knn]),
        AblationArm::new("dual-unanimous", Random, &[Mahalanobis, Knn]),
        AblationArm::new("full-sage", SimhashFloors, &[Mahalanobis, Knn]),
    ]
}

/// An arm entry in an ablation file: a default arm by name or a full arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArmRef {
    Named(String),
    Custom(AblationArm),
}

fn default_reference() -> String {
    "full-sage".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    /// Population the arms harvest from; the evaluation population is a
    /// second draw of the same scenario with `eval_seed`.
    pub scenario: ScenarioConfig,
    pub eval_seed: u64,
    /// Default arms when absent.
    #[serde(default)]
    pub arms: Option<Vec<ArmRef>>,
    /// Give gate-free arms a budget equal to the reference arm's yield.
    #[serde(default = "default_true")]
    pub matched_yield: bool,
    #[serde(default = "default_reference")]
    pub reference_arm: String,
    #[serde(default)]
    pub probe: GdOptions,
    /// Probe probability at or above which a row counts as flagged.
    #[serde(default = "default_flag_threshold")]
    pub flag_threshold: f64,
    /// Fraud recall at which the recall-matched operating point is set.
    #[serde(default = "default_recall_target")]
    pub recall_target: f64,
}

fn default_flag_threshold() -> f64 {
    0.5
}

fn default_recall_target() -> f64 {
    0.9
}

impl AblationSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        let spec: AblationSpec = serde_json::from_str(s)?;
        spec.scenario.validate()?;
        spec.resolve_arms()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Expand names into arms and check them.
    pub fn resolve_arms(&self) -> Result<Vec<AblationArm>> {
        let arms = match &self.arms {
            None => default_arms(),
            Some(refs) => refs
                .iter()
                .map(|r| match r {
                    ArmRef::Custom(a) => Ok(a.clone()),
                    ArmRef::Named(n) => default_arms()
                        .into_iter()
                        .find(|a| &a.name == n)
                        .ok_or_else(|| Error::Config(format!("unknown arm {n:?}"))),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if arms.is_empty() {
            return Err(Error::Config("no arms".into()));
        }
        let mut names = HashSet::new();
        for a in &arms {
            if a.name.is_empty() || !names.insert(a.name.as_str()) {
                return Err(Error::Config(format!(
                    "empty or duplicate arm name {:?}",
                    a.name
                )));
            }
            if a.name.contains(['/', '\\']) {
                return Err(Error::Config(format!(
                    "arm name {:?} is not a valid file stem",
                    a.name
                )));
            }
        }
        if self.matched_yield && arms.iter().any(|a| a.gates.is_empty()) {
            match arms.iter().find(|a| a.name == self.reference_arm) {
                Some(r) if !r.gates.is_empty() => {}
                _ => {
                    return Err(Error::Config(format!(
                        "matched yield needs a gated reference arm {:?}",
                        self.reference_arm
                    )))
                }
            }
        }
        if !(0.0..=1.0).contains(&self.flag_threshold) {
            return Err(Error::Config("flag threshold outside [0, 1]".into()));
        }
        if !(self.recall_target > 0.0 && self.recall_target <= 1.0) {
            return Err(Error::Config("recall target outside (0, 1]".into()));
        }
        Ok(arms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRate {
    pub cohort: String,
    pub rows: usize,
    /// Fraction of the cohort's nonfraud rows scoring at or above the fixed
    /// flag threshold.
    pub false_positive_rate: f64,
    /// Same, at the arm's recall-matched threshold.
    pub false_positive_rate_at_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: AblationArm,
    pub budget: usize,
    pub sampled: usize,
    #[serde(rename = "yield")]
    pub yield_count: usize,
    /// True-label contamination of the harvested negatives.
    pub contamination: f64,
    pub contaminated: usize,
    pub coverage_floor_fraction: f64,
    /// Combined-policy test contamination measured with planted truth.
    pub test_true_contamination: Option<f64>,
    pub auprc: f64,
    /// Highest probe threshold whose fraud recall reaches the target.
    pub recall_threshold: f64,
    pub cohort_fpr: Vec<CohortRate>,
    pub pr: Vec<PRPoint>,
    pub probe: Probe,
}

impl ArmResult {
    pub fn cohort(&self, cohort: &str) -> Option<&CohortRate> {
        self.cohort_fpr.iter().find(|c| c.cohort == cohort)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResults {
    pub config_digest: String,
    pub scenario: String,
    pub eval_seed: u64,
    pub arms: Vec<ArmResult>,
}

impl AblationResults {
    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm.name == name)
    }

    /// `arm,contamination,yield,coverage_floor_fraction,auprc`
    pub fn results_csv(&self) -> String {
        let mut out = String::from("arm,contamination,yield,coverage_floor_fraction,auprc\n");
        for a in &self.arms {
            out.push_str(&format!(
                "{},{:?},{},{:?},{:?}\n",
                a.arm.name, a.contamination, a.yield_count, a.coverage_floor_fraction, a.auprc
            ));
        }
        out
    }

    /// Write `results.csv`, `pr_<arm>.csv` per arm, and `ablation.json`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let put = |file: String, body: String| {
            let p = out.join(file);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("results.csv".into(), self.results_csv())?;
        for a in &self.arms {
            put(format!("pr_{}.csv", a.arm.name), pr_csv(&a.pr))?;
        }
        put(
            "ablation.json".into(),
            serde_json::to_string_pretty(self)? + "\n",
        )
    }
}

fn measure(
    arm: &AblationArm,
    cfg: &PipelineConfig,
    population: &Generated,
    eval: &Generated,
    eval_truth: &[bool],
    spec: &AblationSpec,
) -> Result<(ArmResult, RunOutputs)> {
    let run = execute(cfg, &population.dataset, Some(&population.truth))?;
    let accepted: Vec<&str> = run.harvested.harvest.accepted_ids();
    let contaminated = accepted
        .iter()
        .map(|id| population.truth.is_fraud(id))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|f| *f)
        .count();
    let coverage = coverage_report(
        &run.stratified.table,
        &run.stratified.sample,
        cfg.sampler.floor,
    )?;

    let probe = train_probe(&run.harvested.training, &spec.probe)?;
    let scores = eval
        .dataset
        .samples()
        .iter()
        .map(|s| probe.score(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let pr = pr_curve(&scores, eval_truth, &default_pr_grid())?;

    let recall_threshold = threshold_at_recall(&scores, eval_truth, spec.recall_target);
    let mut by_cohort: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for (row, score) in eval.truth.rows().iter().zip(&scores) {
        if row.truth == Label::NonFraud {
            let e = by_cohort.entry(row.cohort.as_str()).or_default();
            e[0] += 1;
            e[1] += usize::from(*score >= spec.flag_threshold);
            e[2] += usize::from(*score >= recall_threshold);
        }
    }
    let cohort_fpr = by_cohort
        .into_iter()
        .map(|(cohort, [rows, fixed, matched])| CohortRate {
            cohort: cohort.to_string(),
            rows,
            false_positive_rate: fixed as f64 / rows as f64,
            false_positive_rate_at_recall: matched as f64 / rows as f64,
        })
        .collect();

    let test_true_contamination = run
        .calibrated
        .report
        .as_ref()
        .and_then(|r| r.test.as_ref())
        .and_then(|t| t.true_contamination);
    let result = ArmResult {
        arm: arm.clone(),
        budget: cfg.sampler.budget,
        sampled: run.stratified.sample.len(),
        yield_count: accepted.len(),
        contamination: if accepted.is_empty() {
            0.0
        } else {
            contaminated as f64 / accepted.len() as f64
        },
        contaminated,
        coverage_floor_fraction: coverage.floor_fraction,
        test_true_contamination,
        auprc: average_precision(&pr),
        recall_threshold,
        cohort_fpr,
        pr,
        probe,
    };
    Ok((result, run))
}

/// The `ceil(target * P)`-th highest score among the `P` positives: the
/// highest threshold whose recall reaches `target`.
fn threshold_at_recall(scores: &[f64], truth: &[bool], target: f64) -> f64 {
    let mut pos: Vec<f64> = scores
        .iter()
        .zip(truth)
        .filter(|(_, t)| **t)
        .map(|(s, _)| *s)
        .collect();
    pos.sort_by(|a, b| b.total_cmp(a));
    let k = ((target * pos.len() as f64).ceil() as usize).clamp(1, pos.len());
    pos[k - 1]
}

/// Accepted ids of every arm, for the intersection check.
type AcceptSets = HashMap<String, HashSet<String>>;

/// Under unanimous voting the accept set must be the intersection of the
/// single-gate accept sets drawn from the same sample.
fn check_intersection(
    arms: &[AblationArm],
    results: &[ArmResult],
    sets: &AcceptSets,
) -> Result<()> {
    for (a, r) in arms.iter().zip(results) {
        if a.gates.len() < 2 || !a.is_unanimous() {
            continue;
        }
        for (b, rb) in arms.iter().zip(results) {
            let single = b.gates.len() == 1 && a.gates.contains(&b.gates[0]);
            if !single || b.sampler != a.sampler || rb.budget != r.budget {
                continue;
            }
            if !sets[&a.name].is_subset(&sets[&b.name]) || r.contaminated > rb.contaminated {
                return Err(Error::Consistency(format!(
                    "arm {} is not contained in single-gate arm {}",
                    a.name, b.name
                )));
            }
        }
    }
    Ok(())
}

/// Run every arm against one generated population and score each arm's
/// probe on an independent draw of the same scenario.
pub fn run_ablation(base: &PipelineConfig, spec: &AblationSpec) -> Result<AblationResults> {
    let arms = spec.resolve_arms()?;
    let population = generate(&spec.scenario)?;
    if population.dataset.dim() != base.dim {
        return Err(Error::DimensionMismatch {
            expected: base.dim,
            actual: population.dataset.dim(),
        });
    }
    let mut eval_scenario = spec.scenario.clone();
    eval_scenario.seed = spec.eval_seed;
    let eval = generate(&eval_scenario)?;
    let eval_truth: Vec<bool> = eval
        .truth
        .rows()
        .iter()
        .map(|r| r.truth == Label::Fraud)
        .collect();

    // Gated arms first; gate-free arms may need the reference yield.
    let run_arms =
        |idx: Vec<usize>,
         budget: Option<usize>|
         -> Result<Vec<(usize, ArmResult, HashSet<String>)>> {
            idx.into_par_iter()
                .map(|i| {
                    let arm = &arms[i];
                    let mut cfg = arm.config(base);
                    if let Some(b) = budget {
                        cfg.sampler.budget = b.max(1);
                    }
                    let (r, run) = measure(arm, &cfg, &population, &eval, &eval_truth, spec)
                        .map_err(|e| Error::Stage {
                            stage: format!("arm {}", arm.name),
                            source: Box::new(e),
                        })?;
                    let set = run
                        .harvested
                        .harvest
                        .accepted_ids()
                        .into_iter()
                        .map(String::from)
                        .collect();
                    Ok((i, r, set))
                })
                .collect()
        };
    let (gated, free): (Vec<usize>, Vec<usize>) =
        (0..arms.len()).partition(|&i| !arms[i].gates.is_empty());
    let mut done = run_arms(gated, None)?;
    let matched = if spec.matched_yield && !free.is_empty() {
        let (_, r, _) = done
            .iter()
            .find(|(i, _, _)| arms[*i].name == spec.reference_arm)
            .ok_or_else(|| Error::Config("reference arm missing".into()))?;
        Some(r.yield_count)
    } else {
        None
    };
    done.extend(run_arms(free, matched)?);
    done.sort_by_key(|(i, _, _)| *i);

    let mut sets = AcceptSets::new();
    let mut results = Vec::with_capacity(done.len());
    for (i, r, set) in done {
        sets.insert(arms[i].name.clone(), set);
        results.push(r);
    }
    check_intersection(&arms, &results, &sets)?;

    Ok(AblationResults {
        config_digest: base.digest(),
        scenario: spec.scenario.name.clone(),
        eval_seed: spec.eval_seed,
        arms: results,
    })
}
