//! Seeded Gaussian-mixture populations with planted ground truth.
//!
//! A scenario lists cohorts, each with a role (labeled fraud, labeled
//! nonfraud, or unlabeled legitimate), a mean, a covariance and a share of
//! the population. A fixed fraction of unlabeled slots is replaced by hidden
//! fraud drawn from a designated fraud cohort. Visible labels go to the
//! dataset; true labels and cohort names go to a separate sidecar.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{check_header, Dataset, FeatureVector, Label, Sample};
use crate::gates::cholesky;
use crate::sampler::largest_remainder;
use crate::{Error, Result};

/// Cohort name recorded in the sidecar for planted fraud among unlabeled rows.
pub const HIDDEN_FRAUD_COHORT: &str = "hidden-fraud";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortRole {
    /// Visible label fraud, truth fraud.
    Fraud,
    /// Visible label nonfraud, truth nonfraud.
    NonFraud,
    /// Visible label unlabeled, truth nonfraud unless replaced by hidden fraud.
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    /// Diagonal variances.
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Covariance {
    pub fn isotropic(dim: usize, variance: f64) -> Self {
        Covariance::Diagonal(vec![variance; dim])
    }

    fn matrix(&self, dim: usize) -> Result<Array2<f64>> {
        match self {
            Covariance::Diagonal(v) => {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: v.len(),
                    });
                }
                Ok(Array2::from_diag(&ndarray::Array1::from(v.clone())))
            }
            Covariance::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidInput(format!(
                        "covariance must be {dim}x{dim}"
                    )));
                }
                let m = Array2::from_shape_fn((dim, dim), |(i, j)| rows[i][j]);
                for i in 0..dim {
                    for j in 0..i {
                        if m[[i, j]] != m[[j, i]] {
                            return Err(Error::InvalidInput("covariance is not symmetric".into()));
                        }
                    }
                }
                Ok(m)
            }
        }
    }

    /// Lower Cholesky factor, or an error if not SPD.
    pub fn factor(&self, dim: usize) -> Result<Array2<f64>> {
        let m = self.matrix(dim)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance"));
        }
        cholesky(&m)
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub name: String,
    pub role: CohortRole,
    pub mean: Vec<f64>,
    pub covariance: Covariance,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub dim: usize,
    pub n: usize,
    pub cohorts: Vec<CohortSpec>,
    /// Probability that an unlabeled slot holds hidden fraud.
    pub hidden_fraud_rate: f64,
    /// Fraud cohort whose distribution hidden fraud is drawn from.
    pub hidden_fraud_cohort: Option<String>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n == 0 {
            return Err(Error::Config("scenario needs dim >= 1 and n >= 1".into()));
        }
        if self.cohorts.is_empty() {
            return Err(Error::Config("scenario has no cohorts".into()));
        }
        let mut names = HashSet::new();
        let mut total = 0.0;
        for c in &self.cohorts {
            if !names.insert(c.name.as_str()) || c.name == HIDDEN_FRAUD_COHORT {
                return Err(Error::Config(format!(
                    "duplicate or reserved cohort name {:?}",
                    c.name
                )));
            }
            if c.mean.len() != self.dim {
                return Err(Error::Config(format!(
                    "cohort {} mean has wrong length",
                    c.name
                )));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "cohort {} mean is not finite",
                    c.name
                )));
            }
            if !(c.proportion >= 0.0 && c.proportion <= 1.0) {
                return Err(Error::Config(format!(
                    "cohort {} proportion outside [0, 1]",
                    c.name
                )));
            }
            c.covariance
                .factor(self.dim)
                .map_err(|e| Error::Config(format!("cohort {}: {e}", c.name)))?;
            total += c.proportion;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "cohort proportions sum to {total}, not 1"
            )));
        }
        if !(0.0..1.0).contains(&self.hidden_fraud_rate) {
            return Err(Error::Config("hidden fraud rate must lie in [0, 1)".into()));
        }
        if self.hidden_fraud_rate > 0.0 {
            let name = self.hidden_fraud_cohort.as_deref().ok_or_else(|| {
                Error::Config("hidden fraud rate set without a source cohort".into())
            })?;
            match self.cohorts.iter().find(|c| c.name == name) {
                Some(c) if c.role == CohortRole::Fraud => {}
                _ => {
                    return Err(Error::Config(format!(
                        "hidden fraud cohort {name:?} is not a fraud cohort"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Integer cohort sizes summing to `n` (largest remainder over the
    /// proportions).
    pub fn cohort_sizes(&self) -> Vec<usize> {
        const SCALE: f64 = 1e12;
        let weights: Vec<u64> = self
            .cohorts
            .iter()
            .map(|c| (c.proportion * SCALE).round() as u64)
            .collect();
        largest_remainder(self.n as u64, &weights)
            .into_iter()
            .map(|v| v as usize)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRow {
    pub id: String,
    pub truth: Label,
    pub cohort: String,
}

/// Ground-truth sidecar: planted label and cohort for every generated id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthTable {
    rows: Vec<TruthRow>,
    index: HashMap<String, usize>,
}

impl TruthTable {
    pub fn from_rows(rows: Vec<TruthRow>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if !matches!(r.truth, Label::Fraud | Label::NonFraud) {
                return Err(Error::InvalidInput(format!(
                    "truth for {:?} must be fraud or nonfraud",
                    r.id
                )));
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate truth id {:?}",
                    r.id
                )));
            }
        }
        Ok(TruthTable { rows, index })
    }

    pub fn rows(&self) -> &[TruthRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TruthRow> {
        self.index.get(id).map(|&i| &self.rows[i])
    }

    pub fn is_fraud(&self, id: &str) -> Result<bool> {
        Ok(truth_lookup(self, id)? == Label::Fraud)
    }
}

pub fn truth_lookup(sidecar: &TruthTable, id: &str) -> Result<Label> {
    sidecar
        .get(id)
        .map(|r| r.truth)
        .ok_or_else(|| Error::InvalidInput(format!("id {id:?} has no planted truth")))
}

const TRUTH_HEADER: [&str; 3] = ["id", "truth", "cohort"];

pub fn write_truth<W: Write>(t: &TruthTable, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(TRUTH_HEADER)?;
    for r in &t.rows {
        wtr.write_record([r.id.as_str(), r.truth.as_str(), r.cohort.as_str()])?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn read_truth<R: Read>(reader: R) -> Result<TruthTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records.next().transpose()?;
    let expected: Vec<String> = TRUTH_HEADER.iter().map(|s| s.to_string()).collect();
    check_header(header.as_ref(), &expected)?;
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(Error::Row {
                row,
                message: format!("expected 3 columns, found {}", rec.len()),
            });
        }
        let truth: Label = rec[1].trim().parse().map_err(|e: Error| Error::Row {
            row,
            message: e.to_string(),
        })?;
        rows.push(TruthRow {
            id: rec[0].to_string(),
            truth,
            cohort: rec[2].to_string(),
        });
    }
    TruthTable::from_rows(rows)
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<TruthTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_truth(file)
}

pub fn save_truth(t: &TruthTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_truth(t, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: TruthTable,
}

/// Draw a population. Rows are generated cohort by cohort from one ChaCha8
/// stream, shuffled, and then given ids `x000000`, `x000001`, ... in
/// shuffled order so ids carry no cohort information.
pub fn generate(scenario: &ScenarioConfig) -> Result<Generated> {
    scenario.validate()?;
    let dim = scenario.dim;
    let factors = scenario
        .cohorts
        .iter()
        .map(|c| c.covariance.factor(dim))
        .collect::<Result<Vec<_>>>()?;
    let hidden = scenario
        .hidden_fraud_cohort
        .as_deref()
        .and_then(|name| scenario.cohorts.iter().position(|c| c.name == name));

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let draw = |k: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let l = &factors[k];
        (0..dim)
            .map(|i| scenario.cohorts[k].mean[i] + (0..=i).map(|j| l[[i, j]] * z[j]).sum::<f64>())
            .collect()
    };

    let mut rows: Vec<(Vec<f64>, Label, Label, String)> = Vec::with_capacity(scenario.n);
    for (k, (cohort, size)) in scenario
        .cohorts
        .iter()
        .zip(scenario.cohort_sizes())
        .enumerate()
    {
        for _ in 0..size {
            let row = match cohort.role {
                CohortRole::Fraud => (
                    draw(k, &mut rng),
                    Label::Fraud,
                    Label::Fraud,
                    cohort.name.clone(),
                ),
                CohortRole::NonFraud => (
                    draw(k, &mut rng),
                    Label::NonFraud,
                    Label::NonFraud,
                    cohort.name.clone(),
                ),
                CohortRole::Unlabeled => {
                    let u: f64 = rng.random();
                    match hidden {
                        Some(h) if u < scenario.hidden_fraud_rate => (
                            draw(h, &mut rng),
                            Label::Unlabeled,
                            Label::Fraud,
                            HIDDEN_FRAUD_COHORT.to_string(),
                        ),
                        _ => (
                            draw(k, &mut rng),
                            Label::Unlabeled,
                            Label::NonFraud,
                            cohort.name.clone(),
                        ),
                    }
                }
            };
            rows.push(row);
        }
    }
    rows.shuffle(&mut rng);

    let mut dataset = Dataset::new(dim)?;
    let mut truth_rows = Vec::with_capacity(rows.len());
    for (i, (x, visible, truth, cohort)) in rows.into_iter().enumerate() {
        let id = format!("x{i:06}");
        dataset.push(Sample {
            id: id.clone(),
            features: FeatureVector::new(x)?,
            label: visible,
        })?;
        truth_rows.push(TruthRow { id, truth, cohort });
    }
    Ok(Generated {
        dataset,
        truth: TruthTable::from_rows(truth_rows)?,
    })
}

/// Built-in scenarios.
pub mod scenarios {
    use super::*;

    pub const DIM: usize = 8;

    fn unit(i: usize, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; DIM];
        v[i] = scale;
        v
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn cohort(
        name: &str,
        role: CohortRole,
        mean: Vec<f64>,
        variance: f64,
        proportion: f64,
    ) -> CohortSpec {
        CohortSpec {
            name: name.into(),
            role,
            mean,
            covariance: Covariance::isotropic(DIM, variance),
            proportion,
        }
    }

    /// Fraud center, 6 units from the mainstream center along the first axis.
    pub fn fraud_mean() -> Vec<f64> {
        unit(0, 6.0)
    }

    /// Fraud cohort 6 units from the mainstream cohort, 1% hidden fraud
    /// among unlabeled rows.
    pub fn s1(n: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            name: "s1-separated".into(),
            dim: DIM,
            n,
            cohorts: vec![
                cohort("fraud", CohortRole::Fraud, fraud_mean(), 0.25, 0.01),
                cohort("verified", CohortRole::NonFraud, vec![0.0; DIM], 1.0, 0.01),
                cohort(
                    "mainstream",
                    CohortRole::Unlabeled,
                    vec![0.0; DIM],
                    1.0,
                    0.98,
                ),
            ],
            hidden_fraud_rate: 0.01,
            hidden_fraud_cohort: Some("fraud".into()),
            seed,
        }
    }

    /// S1 plus a legitimate "superfan" cohort (2%) centered 1.5 units from
    /// the fraud center.
    pub fn s2(n: usize, seed: u64) -> ScenarioConfig {
        let mut s = s1(n, seed);
        s.name = "s2-edge-overlap".into();
        let main = s
            .cohorts
            .iter_mut()
            .find(|c| c.name == "mainstream")
            .unwrap();
        main.proportion -= 0.02;
        s.cohorts.push(cohort(
            "superfan",
            CohortRole::Unlabeled,
            add(&fraud_mean(), &unit(1, 1.5)),
            0.25,
            0.02,
        ));
        s
    }

    /// S2 plus a rare legitimate cohort (0.2%) in a region of its own.
    pub fn s3(n: usize, seed: u64) -> ScenarioConfig {
        let mut s = s2(n, seed);
        s.name = "s3-rare-stratum".into();
        let main = s
            .cohorts
            .iter_mut()
            .find(|c| c.name == "mainstream")
            .unwrap();
        main.proportion -= 0.002;
        s.cohorts.push(cohort(
            "rare",
            CohortRole::Unlabeled,
            unit(2, -6.0),
            0.25,
            0.002,
        ));
        s
    }

    pub fn by_name(name: &str, n: usize, seed: u64) -> Option<ScenarioConfig> {
        match name {
            "s1" => Some(s1(n, seed)),
            "s2" => Some(s2(n, seed)),
            "s3" => Some(s3(n, seed)),
            _ => None,
        }
    }
}
