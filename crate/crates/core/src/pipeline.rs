//! Configuration-driven pipeline: standardize, stratify, allocate and draw,
//! fit gates, calibrate, harvest, export. Each stage has an in-memory form
//! (used by the ablation harness) and a file-writing form (used by the CLI),
//! and every artifact carries the digest of the configuration that made it.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibrate_gates, confirm_on_test, default_grid, split, validate_grid, CalibrationReport,
    ContaminationEstimator, EstimatorKind, SplitSpec, Splits,
};
use crate::data::{fit_standardizer, load_dataset, Dataset, Label, LabelFilter, Standardizer};
use crate::datagen::{load_truth, TruthTable};
use crate::ensemble::{
    accept_all, build_training_set, harvest, write_training_set, Candidate, Harvest, TrainingSet,
    VotingPolicy,
};
use crate::gates::{fit_knn, fit_mahalanobis, GateKind, GateModel, DEFAULT_JITTER_LADDER};
use crate::logistic::{fit_weighted, GdOptions, Problem};
use crate::sampler::{allocate, draw, draw_uniform, AllocationPlan};
use crate::simhash::{build_projections, stratify, ProjectionBank, StratumTable, MAX_BITS};
use crate::stats::sha256_hex;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimhashParams {
    #[serde(default = "default_bits")]
    pub bits: usize,
    #[serde(default = "default_prefix_bits")]
    pub prefix_bits: usize,
    pub seed: u64,
}

fn default_bits() -> usize {
    64
}

fn default_prefix_bits() -> usize {
    12
}

/// How candidates are drawn from the unlabeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// SimHash strata with floor-constrained proportional allocation.
    #[default]
    SimhashFloors,
    /// Uniform sample of the unlabeled pool.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerParams {
    #[serde(default)]
    pub kind: SamplerKind,
    pub budget: usize,
    #[serde(default)]
    pub floor: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateParams {
    #[serde(default = "default_enabled")]
    pub enabled: Vec<GateKind>,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_ladder")]
    pub jitter_ladder: Vec<f64>,
}

fn default_enabled() -> Vec<GateKind> {
    vec![GateKind::Mahalanobis, GateKind::Knn]
}

fn default_knn_k() -> usize {
    5
}

fn default_ladder() -> Vec<f64> {
    DEFAULT_JITTER_LADDER.to_vec()
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams {
            enabled: default_enabled(),
            knn_k: default_knn_k(),
            jitter_ladder: default_ladder(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    /// Votes needed to accept; all enabled gates when absent.
    #[serde(default)]
    pub required_votes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationParams {
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "default_max_contamination")]
    pub max_contamination: f64,
    #[serde(default = "default_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
    pub split_seed: u64,
    #[serde(default)]
    pub estimator: EstimatorKind,
}

fn default_max_contamination() -> f64 {
    0.01
}

fn default_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    /// Ground-truth sidecar; required by the true-label estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    pub dim: usize,
    /// Rows the standardizer is fitted on.
    #[serde(default)]
    pub standardize_on: LabelFilter,
    pub simhash: SimhashParams,
    pub sampler: SamplerParams,
    #[serde(default)]
    pub gates: GateParams,
    #[serde(default)]
    pub policy: PolicyParams,
    pub calibration: CalibrationParams,
    /// Not part of the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = rebase(base, &cfg.dataset);
        cfg.truth = cfg.truth.as_deref().map(|p| rebase(base, p));
        cfg.output_dir = cfg.output_dir.as_deref().map(|p| rebase(base, p));
        Ok(cfg)
    }

    /// Replace every seed with `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        self.simhash.seed = seed;
        self.sampler.seed = seed;
        self.calibration.split_seed = seed;
    }

    /// SHA-256 of the serialized configuration without its output directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(
            self.calibration.validation_fraction,
            self.calibration.test_fraction,
            self.calibration.split_seed,
        )
    }

    /// Voting policy for the enabled gates; `None` when no gate is enabled.
    pub fn voting_policy(&self) -> Result<Option<VotingPolicy>> {
        let n = self.gates.enabled.len();
        match (n, self.policy.required_votes) {
            (0, None) => Ok(None),
            (0, Some(k)) => Err(Error::Config(format!(
                "required_votes = {k} with no gates enabled"
            ))),
            (n, k) => VotingPolicy::new(k.unwrap_or(n), n).map(Some),
        }
    }

    /// Checks that need no data. Run before any stage.
    pub fn validate(&self) -> Result<()> {
        self.validate_params()?;
        self.check_truth(self.truth.is_some())
    }

    /// As `validate`, without requiring a sidecar path.
    fn validate_params(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        let s = &self.simhash;
        if s.bits == 0 || s.bits > MAX_BITS {
            return bad(format!("simhash bits {} outside 1..={MAX_BITS}", s.bits));
        }
        if s.prefix_bits == 0 || s.prefix_bits > s.bits {
            return bad(format!(
                "prefix_bits {} outside 1..={}",
                s.prefix_bits, s.bits
            ));
        }
        if self.sampler.budget == 0 {
            return bad("sampler budget must be at least 1".into());
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.gates.enabled.iter().find(|g| !seen.insert(**g)) {
            return bad(format!("gate {} enabled twice", dup.as_str()));
        }
        if self.gates.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if self
            .gates
            .jitter_ladder
            .iter()
            .any(|j| !(j.is_finite() && *j > 0.0))
        {
            return bad("jitter ladder entries must be positive and finite".into());
        }
        self.voting_policy()?;
        let c = &self.calibration;
        validate_grid(&c.grid).map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&c.max_contamination) {
            return bad("max_contamination outside [0, 1]".into());
        }
        self.split_spec()?;
        if let EstimatorKind::DistanceProbe { radius_quantile } = c.estimator {
            if !(0.0..=1.0).contains(&radius_quantile) {
                return bad("probe radius quantile outside [0, 1]".into());
            }
        }
        Ok(())
    }

    fn check_truth(&self, have_truth: bool) -> Result<()> {
        if self.calibration.estimator == EstimatorKind::TrueLabel && !have_truth {
            return Err(Error::Config(
                "true-label estimator needs a truth sidecar".into(),
            ));
        }
        Ok(())
    }

    /// Checks against the loaded data. Run before any stage.
    pub fn validate_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: data.dim(),
            });
        }
        let fraud = data.with_label(Label::Fraud).count();
        if self.gates.enabled.contains(&GateKind::Knn) && self.gates.knn_k >= fraud {
            return Err(Error::Config(format!(
                "knn_k = {} needs more than {} labeled fraud rows",
                self.gates.knn_k, fraud
            )));
        }
        if data.with_label(Label::Unlabeled).next().is_none() {
            return Err(Error::InvalidInput("dataset has no unlabeled rows".into()));
        }
        Ok(())
    }
}

/// Output of stratify plus allocate and draw.
#[derive(Debug, Clone)]
pub struct Stratified {
    pub standardizer: Standardizer,
    pub bank: ProjectionBank,
    /// Strata of the unlabeled pool; built for every sampler kind so
    /// coverage is comparable.
    pub table: StratumTable,
    /// Present for the SimHash sampler only.
    pub plan: Option<AllocationPlan>,
    /// Drawn unlabeled ids, sorted.
    pub sample: Vec<String>,
}

pub fn stage_stratify(cfg: &PipelineConfig, data: &Dataset) -> Result<Stratified> {
    let standardizer = fit_standardizer(data, &cfg.standardize_on)?;
    let bank = build_projections(cfg.dim, cfg.simhash.bits, cfg.simhash.seed)?;
    let pool = LabelFilter::only(Label::Unlabeled);
    let table = stratify(&bank, data, &pool, &standardizer, cfg.simhash.prefix_bits)?;
    let (plan, sample) = match cfg.sampler.kind {
        SamplerKind::SimhashFloors => {
            let plan = allocate(&table, cfg.sampler.budget, cfg.sampler.floor);
            let sample = draw(&plan, &table, cfg.sampler.seed)?;
            (Some(plan), sample)
        }
        SamplerKind::Random => {
            let ids: Vec<String> = data.select(&pool).map(|s| s.id.clone()).collect();
            (
                None,
                draw_uniform(&ids, cfg.sampler.budget, cfg.sampler.seed),
            )
        }
    };
    Ok(Stratified {
        standardizer,
        bank,
        table,
        plan,
        sample,
    })
}

/// Standardized candidates for `ids`, in the given order.
pub fn candidates(
    data: &Dataset,
    standardizer: &Standardizer,
    ids: &[String],
) -> Result<Vec<Candidate>> {
    ids.iter()
        .map(|id| {
            let s = data
                .get(id)
                .ok_or_else(|| Error::Consistency(format!("id {id:?} not in dataset")))?;
            Ok(Candidate {
                id: id.clone(),
                x: standardizer.transform(&s.features)?,
            })
        })
        .collect()
}

fn standardized_rows<'a>(
    data: &Dataset,
    standardizer: &Standardizer,
    ids: impl IntoIterator<Item = &'a String>,
    label: Label,
) -> Result<Vec<Vec<f64>>> {
    ids.into_iter()
        .filter_map(|id| data.get(id))
        .filter(|s| s.label == label)
        .map(|s| standardizer.transform(&s.features).map(Vec::from))
        .collect()
}

/// Output of gate fitting, calibration, and test confirmation.
#[derive(Debug, Clone)]
pub struct Calibrated {
    pub splits: Splits,
    /// Gates with their selected thresholds, in enabled order.
    pub gates: Vec<GateModel>,
    pub policy: Option<VotingPolicy>,
    /// Absent when no gate is enabled.
    pub report: Option<CalibrationReport>,
}

fn build_estimator(
    cfg: &PipelineConfig,
    data: &Dataset,
    truth: Option<&TruthTable>,
    standardizer: &Standardizer,
    splits: &Splits,
    gates: &[GateModel],
) -> Result<ContaminationEstimator> {
    match cfg.calibration.estimator {
        EstimatorKind::TrueLabel => {
            let t = truth.ok_or_else(|| {
                Error::Config("true-label estimator needs a truth sidecar".into())
            })?;
            Ok(ContaminationEstimator::true_label(t))
        }
        EstimatorKind::DistanceProbe { radius_quantile } => {
            let gate = match gates.iter().find(|g| g.kind() == GateKind::Mahalanobis) {
                Some(GateModel::Mahalanobis(g)) => g.clone(),
                _ => {
                    let fit = standardized_rows(data, standardizer, &splits.fit, Label::Fraud)?;
                    fit_mahalanobis(&fit, &cfg.gates.jitter_ladder)?
                }
            };
            let probe = standardized_rows(data, standardizer, &splits.validation, Label::Fraud)?;
            ContaminationEstimator::distance_probe(gate, &probe, radius_quantile)
        }
        EstimatorKind::RegressionProbe => {
            let pos = standardized_rows(data, standardizer, &splits.fit, Label::Fraud)?;
            let neg = standardized_rows(data, standardizer, &splits.fit, Label::NonFraud)?;
            let ys: Vec<bool> = pos
                .iter()
                .map(|_| true)
                .chain(neg.iter().map(|_| false))
                .collect();
            let xs: Vec<Vec<f64>> = pos.into_iter().chain(neg).collect();
            let weights = vec![1.0; xs.len()];
            let model = fit_weighted(
                &Problem {
                    xs: &xs,
                    ys: &ys,
                    weights: &weights,
                },
                &GdOptions::default(),
            )?;
            Ok(ContaminationEstimator::RegressionProbe(model))
        }
    }
}

pub fn stage_calibrate(
    cfg: &PipelineConfig,
    data: &Dataset,
    truth: Option<&TruthTable>,
    standardizer: &Standardizer,
    sample: &[String],
) -> Result<Calibrated> {
    let splits = split(data, &cfg.split_spec()?, &[Label::Fraud, Label::Unlabeled])?;
    splits.assert_disjoint()?;
    let policy = cfg.voting_policy()?;
    if cfg.gates.enabled.is_empty() {
        return Ok(Calibrated {
            splits,
            gates: Vec::new(),
            policy,
            report: None,
        });
    }

    let fraud = standardized_rows(data, standardizer, &splits.fit, Label::Fraud)?;
    let mut gates = cfg
        .gates
        .enabled
        .iter()
        .map(|kind| match kind {
            GateKind::Mahalanobis => {
                fit_mahalanobis(&fraud, &cfg.gates.jitter_ladder).map(GateModel::Mahalanobis)
            }
            GateKind::Knn => fit_knn(&fraud, cfg.gates.knn_k).map(GateModel::Knn),
        })
        .collect::<Result<Vec<_>>>()?;

    let in_split = |part: &[String]| -> Vec<String> {
        let set: HashSet<&str> = part.iter().map(String::as_str).collect();
        sample
            .iter()
            .filter(|id| set.contains(id.as_str()))
            .cloned()
            .collect()
    };
    let validation = candidates(data, standardizer, &in_split(&splits.validation))?;
    let test = candidates(data, standardizer, &in_split(&splits.test))?;

    let estimator = build_estimator(cfg, data, truth, standardizer, &splits, &gates)?;
    let c = &cfg.calibration;
    let mut report = calibrate_gates(
        &mut gates,
        &validation,
        &c.grid,
        &estimator,
        c.max_contamination,
    )?;
    let truth_estimator = truth.map(ContaminationEstimator::true_label);
    let validation_ids: HashSet<&str> = splits.validation.iter().map(String::as_str).collect();
    let policy_ref = policy.as_ref().expect("gates enabled implies a policy");
    report.test = Some(confirm_on_test(
        &gates,
        policy_ref,
        &test,
        &validation_ids,
        &estimator,
        truth_estimator.as_ref(),
        c.max_contamination,
    )?);
    Ok(Calibrated {
        splits,
        gates,
        policy,
        report: Some(report),
    })
}

#[derive(Debug, Clone)]
pub struct Harvested {
    pub harvest: Harvest,
    pub training: TrainingSet,
}

/// Harvest every drawn candidate and assemble the weighted training set.
pub fn stage_harvest(
    data: &Dataset,
    standardizer: &Standardizer,
    sample: &[String],
    gates: &[GateModel],
    policy: Option<&VotingPolicy>,
) -> Result<Harvested> {
    let cands = candidates(data, standardizer, sample)?;
    let h = match policy {
        Some(p) => harvest(&cands, gates, p)?,
        None if gates.is_empty() => accept_all(&cands),
        None => {
            return Err(Error::Config(
                "gates supplied without a voting policy".into(),
            ))
        }
    };
    let training = build_training_set(&h.records, data, data)?;
    Ok(Harvested {
        harvest: h,
        training,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub stratified: Stratified,
    pub calibrated: Calibrated,
    pub harvested: Harvested,
}

/// All stages in memory, without touching the file system.
pub fn execute(
    cfg: &PipelineConfig,
    data: &Dataset,
    truth: Option<&TruthTable>,
) -> Result<RunOutputs> {
    cfg.validate_params()?;
    cfg.check_truth(truth.is_some())?;
    cfg.validate_data(data)?;
    let stratified = stage_stratify(cfg, data).map_err(Error::stage("stratify"))?;
    let calibrated = stage_calibrate(
        cfg,
        data,
        truth,
        &stratified.standardizer,
        &stratified.sample,
    )
    .map_err(Error::stage("calibrate"))?;
    let harvested = stage_harvest(
        data,
        &stratified.standardizer,
        &stratified.sample,
        &calibrated.gates,
        calibrated.policy.as_ref(),
    )
    .map_err(Error::stage("harvest"))?;
    Ok(RunOutputs {
        stratified,
        calibrated,
        harvested,
    })
}

// ---------------------------------------------------------------------------
// Artifacts

pub const STANDARDIZER_FILE: &str = "standardizer.json";
pub const STRATA_FILE: &str = "strata.json";
pub const ALLOCATION_FILE: &str = "allocation.json";
pub const SAMPLE_FILE: &str = "sample.csv";
pub const SPLITS_FILE: &str = "splits.json";
pub const GATES_FILE: &str = "gates.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const CALIBRATION_CSV_FILE: &str = "calibration.csv";
pub const HARVEST_MANIFEST_FILE: &str = "harvest_manifest.json";
pub const TRAINING_FILE: &str = "training.csv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerArtifact {
    pub config_digest: String,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataArtifact {
    pub config_digest: String,
    pub bank: ProjectionBank,
    pub table: StratumTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationArtifact {
    pub config_digest: String,
    pub sampler: SamplerKind,
    pub plan: Option<AllocationPlan>,
    pub sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitsArtifact {
    pub config_digest: String,
    pub splits: Splits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatesArtifact {
    pub config_digest: String,
    #[serde(default)]
    pub policy: Option<VotingPolicy>,
    pub gates: Vec<GateModel>,
}

impl GatesArtifact {
    /// Parse and check a gates file: every gate valid, dimensions agree,
    /// and the policy matches the gate count.
    pub fn from_json(s: &str) -> Result<Self> {
        let a: GatesArtifact = serde_json::from_str(s)?;
        for g in &a.gates {
            g.validate()?;
        }
        if let Some(first) = a.gates.first() {
            if let Some(g) = a.gates.iter().find(|g| g.dim() != first.dim()) {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    actual: g.dim(),
                });
            }
        }
        match &a.policy {
            Some(p) if p.total_gates() != a.gates.len() => Err(Error::Config(format!(
                "policy expects {} gates, file has {}",
                p.total_gates(),
                a.gates.len()
            ))),
            None if !a.gates.is_empty() => {
                Err(Error::Config("gates file has gates but no policy".into()))
            }
            _ => Ok(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub config_digest: String,
    pub report: Option<CalibrationReport>,
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Newline-separated id list with header `id`.
pub fn write_ids(ids: &[String]) -> String {
    let mut s = String::from("id\n");
    for id in ids {
        s.push_str(id);
        s.push('\n');
    }
    s
}

pub fn read_ids(text: &str) -> Result<Vec<String>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some("id") {
        return Err(Error::Row {
            row: 1,
            message: "expected header `id`".into(),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let id = line.trim_end_matches('\r');
        if id.is_empty() || !seen.insert(id) {
            return Err(Error::Row {
                row: i as u64 + 2,
                message: format!("empty or duplicate id {id:?}"),
            });
        }
        out.push(id.to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    /// Artifacts read from an earlier invocation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<ArtifactRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sampled: usize,
    pub scanned: usize,
    pub harvested: usize,
    pub training_rows: usize,
    pub max_contamination: f64,
    #[serde(default)]
    pub test_contamination: Option<f64>,
    #[serde(default)]
    pub test_true_contamination: Option<f64>,
    #[serde(default)]
    pub test_passed: Option<bool>,
}

/// Record of one CLI invocation. `complete` is false when a stage failed;
/// artifacts written before the failure are listed and should be treated
/// as partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub config: PipelineConfig,
    pub complete: bool,
    pub stages: Vec<StageRecord>,
    #[serde(default)]
    pub summary: Option<RunSummary>,
}

/// Writes artifacts into an output directory and records their hashes.
struct Recorder {
    out: PathBuf,
    digest: String,
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn new(cfg: &PipelineConfig, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Recorder {
            out: out.to_path_buf(),
            digest: cfg.digest(),
            stages: Vec::new(),
        })
    }

    fn begin(&mut self, stage: &str) {
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            status: StageStatus::Ok,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            error: None,
        });
    }

    fn write(&mut self, file: &str, contents: &[u8]) -> Result<()> {
        let path = self.out.join(file);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.stages
            .last_mut()
            .expect("stage begun")
            .artifacts
            .push(ArtifactRecord {
                file: file.to_string(),
                sha256: sha256_hex(contents),
            });
        Ok(())
    }

    /// Read an input artifact from the output directory, recording its hash.
    fn read(&mut self, file: &str) -> Result<String> {
        let path = self.out.join(file);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        self.stages
            .last_mut()
            .expect("stage begun")
            .inputs
            .push(ArtifactRecord {
                file: file.to_string(),
                sha256: sha256_hex(text.as_bytes()),
            });
        Ok(text)
    }

    fn fail(&mut self, e: &Error) {
        if let Some(s) = self.stages.last_mut() {
            s.status = StageStatus::Failed;
            s.error = Some(e.to_string());
        }
    }

    fn skip(&mut self, stage: &str) {
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            status: StageStatus::Skipped,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            error: None,
        });
    }

    fn finish(
        self,
        cfg: &PipelineConfig,
        manifest_file: &str,
        summary: Option<RunSummary>,
    ) -> Result<RunManifest> {
        let mut config = cfg.clone();
        config.output_dir = None;
        let m = RunManifest {
            config_digest: self.digest,
            config,
            complete: self.stages.iter().all(|s| s.status == StageStatus::Ok),
            stages: self.stages,
            summary,
        };
        let path = self.out.join(manifest_file);
        fs::write(&path, to_json(&m)?).map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }
}

/// Resolve the output directory, preferring an explicit override.
pub fn output_dir(cfg: &PipelineConfig, over: Option<&Path>) -> Result<PathBuf> {
    over.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: set output_dir or pass --out".into()))
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(Dataset, Option<TruthTable>)> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset, cfg.dim)?;
    cfg.validate_data(&data)?;
    let truth = cfg.truth.as_deref().map(load_truth).transpose()?;
    Ok((data, truth))
}

fn write_stratified(rec: &mut Recorder, s: &Stratified, kind: SamplerKind) -> Result<()> {
    let digest = rec.digest.clone();
    rec.write(
        STANDARDIZER_FILE,
        to_json(&StandardizerArtifact {
            config_digest: digest.clone(),
            standardizer: s.standardizer.clone(),
        })?
        .as_bytes(),
    )?;
    rec.write(
        STRATA_FILE,
        to_json(&StrataArtifact {
            config_digest: digest.clone(),
            bank: s.bank.clone(),
            table: s.table.clone(),
        })?
        .as_bytes(),
    )?;
    rec.write(
        ALLOCATION_FILE,
        to_json(&AllocationArtifact {
            config_digest: digest,
            sampler: kind,
            plan: s.plan.clone(),
            sampled: s.sample.len(),
        })?
        .as_bytes(),
    )?;
    rec.write(SAMPLE_FILE, write_ids(&s.sample).as_bytes())
}

fn write_calibrated(rec: &mut Recorder, c: &Calibrated) -> Result<()> {
    let digest = rec.digest.clone();
    rec.write(
        SPLITS_FILE,
        to_json(&SplitsArtifact {
            config_digest: digest.clone(),
            splits: c.splits.clone(),
        })?
        .as_bytes(),
    )?;
    rec.write(
        GATES_FILE,
        to_json(&GatesArtifact {
            config_digest: digest.clone(),
            policy: c.policy,
            gates: c.gates.clone(),
        })?
        .as_bytes(),
    )?;
    rec.write(
        CALIBRATION_FILE,
        to_json(&CalibrationArtifact {
            config_digest: digest,
            report: c.report.clone(),
        })?
        .as_bytes(),
    )?;
    if let Some(r) = &c.report {
        rec.write(CALIBRATION_CSV_FILE, r.to_csv().as_bytes())?;
    }
    Ok(())
}

fn write_harvested(rec: &mut Recorder, h: &Harvested) -> Result<()> {
    let mut training = Vec::new();
    write_training_set(&h.training, &mut training)?;
    rec.write(TRAINING_FILE, &training)?;
    let mut manifest = h.harvest.manifest.clone();
    manifest.config_digest = Some(rec.digest.clone());
    manifest.training_set = Some(TRAINING_FILE.to_string());
    rec.write(HARVEST_MANIFEST_FILE, to_json(&manifest)?.as_bytes())
}

fn summary(
    cfg: &PipelineConfig,
    sampled: usize,
    c: Option<&Calibrated>,
    h: Option<&Harvested>,
) -> RunSummary {
    let test = c
        .and_then(|c| c.report.as_ref())
        .and_then(|r| r.test.as_ref());
    RunSummary {
        sampled,
        scanned: h.map_or(0, |h| h.harvest.manifest.scanned),
        harvested: h.map_or(0, |h| h.harvest.manifest.accepted),
        training_rows: h.map_or(0, |h| h.training.rows.len()),
        max_contamination: cfg.calibration.max_contamination,
        test_contamination: test.map(|t| t.contamination),
        test_true_contamination: test.and_then(|t| t.true_contamination),
        test_passed: test.map(|t| t.passed),
    }
}

/// Run every stage, writing artifacts and `run_manifest.json` to `out`.
/// Validation errors are returned before anything is written. A failing
/// stage is recorded in the manifest and its error returned.
pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<RunManifest> {
    let (data, truth) = load_inputs(cfg)?;
    let mut rec = Recorder::new(cfg, out)?;
    let stages = ["stratify", "calibrate", "harvest"];

    rec.begin(stages[0]);
    let s = match stage_stratify(cfg, &data)
        .and_then(|s| write_stratified(&mut rec, &s, cfg.sampler.kind).map(|_| s))
    {
        Ok(s) => s,
        Err(e) => return abort(rec, cfg, &stages, 0, e),
    };
    rec.begin(stages[1]);
    let c = match stage_calibrate(cfg, &data, truth.as_ref(), &s.standardizer, &s.sample)
        .and_then(|c| write_calibrated(&mut rec, &c).map(|_| c))
    {
        Ok(c) => c,
        Err(e) => return abort(rec, cfg, &stages, 1, e),
    };
    rec.begin(stages[2]);
    let h = match stage_harvest(
        &data,
        &s.standardizer,
        &s.sample,
        &c.gates,
        c.policy.as_ref(),
    )
    .and_then(|h| write_harvested(&mut rec, &h).map(|_| h))
    {
        Ok(h) => h,
        Err(e) => return abort(rec, cfg, &stages, 2, e),
    };
    let sum = summary(cfg, s.sample.len(), Some(&c), Some(&h));
    rec.finish(cfg, RUN_MANIFEST_FILE, Some(sum))
}

fn abort<T>(
    mut rec: Recorder,
    cfg: &PipelineConfig,
    stages: &[&str],
    failed: usize,
    e: Error,
) -> Result<T> {
    rec.fail(&e);
    for s in &stages[failed + 1..] {
        rec.skip(s);
    }
    rec.finish(cfg, RUN_MANIFEST_FILE, None)?;
    Err(Error::stage(stages[failed])(e))
}

/// A single stage run on its own, reading earlier outputs from the output
/// directory. Lets thresholds be re-swept without re-stratifying.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Stratify,
    Calibrate,
    Harvest,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Stratify => "stratify",
            Stage::Calibrate => "calibrate",
            Stage::Harvest => "harvest",
        }
    }

    pub fn manifest_file(self) -> String {
        format!("{}_manifest.json", self.name())
    }
}

fn read_standardizer(rec: &mut Recorder) -> Result<Standardizer> {
    let a: StandardizerArtifact = serde_json::from_str(&rec.read(STANDARDIZER_FILE)?)?;
    Ok(a.standardizer)
}

fn read_sample(rec: &mut Recorder) -> Result<Vec<String>> {
    read_ids(&rec.read(SAMPLE_FILE)?)
}

/// Run one stage and write `<stage>_manifest.json`.
pub fn run_stage(cfg: &PipelineConfig, out: &Path, stage: Stage) -> Result<RunManifest> {
    let (data, truth) = load_inputs(cfg)?;
    let mut rec = Recorder::new(cfg, out)?;
    rec.begin(stage.name());
    let result = (|| -> Result<RunSummary> {
        match stage {
            Stage::Stratify => {
                let s = stage_stratify(cfg, &data)?;
                write_stratified(&mut rec, &s, cfg.sampler.kind)?;
                Ok(summary(cfg, s.sample.len(), None, None))
            }
            Stage::Calibrate => {
                let standardizer = read_standardizer(&mut rec)?;
                let sample = read_sample(&mut rec)?;
                let c = stage_calibrate(cfg, &data, truth.as_ref(), &standardizer, &sample)?;
                write_calibrated(&mut rec, &c)?;
                Ok(summary(cfg, sample.len(), Some(&c), None))
            }
            Stage::Harvest => {
                let standardizer = read_standardizer(&mut rec)?;
                let sample = read_sample(&mut rec)?;
                let gates = GatesArtifact::from_json(&rec.read(GATES_FILE)?)?;
                let h = stage_harvest(
                    &data,
                    &standardizer,
                    &sample,
                    &gates.gates,
                    gates.policy.as_ref(),
                )?;
                write_harvested(&mut rec, &h)?;
                Ok(summary(cfg, sample.len(), None, Some(&h)))
            }
        }
    })();
    let file = stage.manifest_file();
    match result {
        Ok(sum) => rec.finish(cfg, &file, Some(sum)),
        Err(e) => {
            rec.fail(&e);
            rec.finish(cfg, &file, None)?;
            Err(Error::stage(stage.name())(e))
        }
    }
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}
