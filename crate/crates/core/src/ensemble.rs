//! k-of-n voting over gate decisions, confidence weighting and export of
//! the weighted training set.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_header, format_real, parse_real, Dataset, FeatureVector, Label};
use crate::gates::{Gate, GateModel};
use crate::stats::logistic;
use crate::{Error, Result};

/// Accept when at least `required_votes` of `total_gates` gates pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct VotingPolicy {
    required_votes: usize,
    total_gates: usize,
}

#[derive(Deserialize)]
struct RawPolicy {
    required_votes: usize,
    total_gates: usize,
}

impl TryFrom<RawPolicy> for VotingPolicy {
    type Error = Error;

    fn try_from(r: RawPolicy) -> Result<Self> {
        VotingPolicy::new(r.required_votes, r.total_gates)
    }
}

impl VotingPolicy {
    pub fn new(required_votes: usize, total_gates: usize) -> Result<Self> {
        if required_votes == 0 || required_votes > total_gates {
            return Err(Error::Config(format!(
                "voting policy needs 1 <= k <= n, got k = {required_votes}, n = {total_gates}"
            )));
        }
        Ok(VotingPolicy {
            required_votes,
            total_gates,
        })
    }

    pub fn unanimous(total_gates: usize) -> Result<Self> {
        VotingPolicy::new(total_gates, total_gates)
    }

    pub fn required_votes(&self) -> usize {
        self.required_votes
    }

    pub fn total_gates(&self) -> usize {
        self.total_gates
    }
}

pub fn vote(passes: &[bool], policy: &VotingPolicy) -> Result<bool> {
    if passes.len() != policy.total_gates {
        return Err(Error::DimensionMismatch {
            expected: policy.total_gates,
            actual: passes.len(),
        });
    }
    Ok(passes.iter().filter(|p| **p).count() >= policy.required_votes)
}

/// Mean of the logistic of each normalized margin. Lies in (0, 1) for
/// finite margins and is strictly increasing in every margin.
pub fn confidence_weight(margins: &[f64], accepted: bool) -> Result<f64> {
    if !accepted {
        return Err(Error::Protocol(
            "confidence weight requested for a rejected sample".into(),
        ));
    }
    if margins.is_empty() {
        return Err(Error::InvalidInput("no margins to weight".into()));
    }
    if margins.iter().any(|m| m.is_nan()) {
        return Err(Error::NonFinite("gate margin"));
    }
    Ok(margins.iter().map(|&m| logistic(m)).sum::<f64>() / margins.len() as f64)
}

/// A candidate for harvesting: an unlabeled sample after standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub x: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestRecord {
    pub id: String,
    pub scores: Vec<f64>,
    pub margins: Vec<f64>,
    pub votes: usize,
    pub accepted: bool,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateThreshold {
    pub gate: String,
    pub tau: f64,
    pub margin_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestManifest {
    pub config_digest: Option<String>,
    pub thresholds: Vec<GateThreshold>,
    /// Absent when no gates ran and every candidate was accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<VotingPolicy>,
    pub scanned: usize,
    pub accepted: usize,
    pub training_set: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Harvest {
    pub records: Vec<HarvestRecord>,
    pub manifest: HarvestManifest,
}

impl Harvest {
    pub fn accepted(&self) -> impl Iterator<Item = &HarvestRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    pub fn accepted_ids(&self) -> Vec<&str> {
        self.accepted().map(|r| r.id.as_str()).collect()
    }
}

/// Score every candidate under every gate, vote, and weight the accepted
/// ones. Rejected candidates keep their scores for auditing. Records come
/// back sorted by id.
pub fn harvest(
    candidates: &[Candidate],
    gates: &[GateModel],
    policy: &VotingPolicy,
) -> Result<Harvest> {
    if gates.len() != policy.total_gates() {
        return Err(Error::Config(format!(
            "policy expects {} gates, {} supplied",
            policy.total_gates(),
            gates.len()
        )));
    }
    let thresholds = gates
        .iter()
        .map(|g| {
            let tau = g.threshold().ok_or_else(|| {
                Error::Config(format!("gate {} has no calibrated threshold", g.name()))
            })?;
            Ok(GateThreshold {
                gate: g.name().to_string(),
                tau,
                margin_scale: g.margin_scale(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = candidates
        .par_iter()
        .map(|c| {
            let decisions = gates
                .iter()
                .map(|g| g.evaluate(&c.x))
                .collect::<Result<Vec<_>>>()?;
            let passes: Vec<bool> = decisions.iter().map(|d| d.pass).collect();
            let margins: Vec<f64> = decisions.iter().map(|d| d.margin).collect();
            let accepted = vote(&passes, policy)?;
            let weight = if accepted {
                Some(confidence_weight(&margins, true)?)
            } else {
                None
            };
            Ok(HarvestRecord {
                id: c.id.clone(),
                scores: decisions.iter().map(|d| d.score).collect(),
                margins,
                votes: passes.iter().filter(|p| **p).count(),
                accepted,
                weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let accepted = records.iter().filter(|r| r.accepted).count();
    Ok(Harvest {
        manifest: HarvestManifest {
            config_digest: None,
            thresholds,
            policy: Some(*policy),
            scanned: records.len(),
            accepted,
            training_set: None,
        },
        records,
    })
}

/// Gate-free harvest: every candidate is accepted with weight 1.
pub fn accept_all(candidates: &[Candidate]) -> Harvest {
    let mut records: Vec<HarvestRecord> = candidates
        .iter()
        .map(|c| HarvestRecord {
            id: c.id.clone(),
            scores: Vec::new(),
            margins: Vec::new(),
            votes: 0,
            accepted: true,
            weight: Some(1.0),
        })
        .collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Harvest {
        manifest: HarvestManifest {
            config_digest: None,
            thresholds: Vec::new(),
            policy: None,
            scanned: records.len(),
            accepted: records.len(),
            training_set: None,
        },
        records,
    }
}

/// One row of the weighted training set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub id: String,
    pub label: Label,
    pub weight: f64,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub dim: usize,
    pub rows: Vec<TrainingRow>,
}

fn training_header(dim: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "label".to_string(), "weight".to_string()];
    h.extend((0..dim).map(|i| format!("f{i}")));
    h
}

/// Assemble the training set: every labeled (fraud, suspicious, nonfraud)
/// row of `labeled` with weight 1, followed by each accepted harvest record
/// as a `nonfraud` row carrying its confidence weight. Raw features for
/// harvested ids are looked up in `population`.
pub fn build_training_set(
    records: &[HarvestRecord],
    population: &Dataset,
    labeled: &Dataset,
) -> Result<TrainingSet> {
    if population.dim() != labeled.dim() {
        return Err(Error::DimensionMismatch {
            expected: labeled.dim(),
            actual: population.dim(),
        });
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for s in labeled
        .samples()
        .iter()
        .filter(|s| s.label != Label::Unlabeled)
    {
        seen.insert(s.id.as_str());
        rows.push(TrainingRow {
            id: s.id.clone(),
            label: s.label,
            weight: 1.0,
            features: s.features.clone(),
        });
    }
    for r in records.iter().filter(|r| r.accepted) {
        if seen.contains(r.id.as_str()) {
            return Err(Error::InvalidInput(format!(
                "harvested id {:?} collides with a labeled row",
                r.id
            )));
        }
        let s = population.get(&r.id).ok_or_else(|| {
            Error::Consistency(format!("harvested id {:?} not in population", r.id))
        })?;
        let weight = r.weight.ok_or_else(|| {
            Error::Consistency(format!("accepted record {:?} has no weight", r.id))
        })?;
        rows.push(TrainingRow {
            id: r.id.clone(),
            label: Label::NonFraud,
            weight,
            features: s.features.clone(),
        });
    }
    Ok(TrainingSet {
        dim: labeled.dim(),
        rows,
    })
}

pub fn write_training_set<W: Write>(set: &TrainingSet, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(training_header(set.dim))?;
    for r in &set.rows {
        let mut rec = vec![r.id.clone(), r.label.to_string(), format_real(r.weight)];
        rec.extend(r.features.iter().map(|v| format_real(*v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Write the CSV `id,label,weight,f0..f{d-1}` to `path`.
pub fn export_training_set(
    records: &[HarvestRecord],
    population: &Dataset,
    labeled: &Dataset,
    path: impl AsRef<Path>,
) -> Result<TrainingSet> {
    let set = build_training_set(records, population, labeled)?;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_training_set(&set, std::io::BufWriter::new(file))?;
    Ok(set)
}

/// Parse a weighted training CSV. Weights must be finite and positive.
pub fn read_training_set<R: Read>(reader: R, dim: usize) -> Result<TrainingSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records.next().transpose()?;
    check_header(header.as_ref(), &training_header(dim))?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in records.enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != dim + 3 {
            return Err(Error::Row {
                row,
                message: format!("expected {} columns, found {}", dim + 3, rec.len()),
            });
        }
        let id = rec[0].to_string();
        if id.is_empty() || !seen.insert(id.clone()) {
            return Err(Error::Row {
                row,
                message: format!("empty or duplicate id {id:?}"),
            });
        }
        let label: Label = rec[1].trim().parse().map_err(|e: Error| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let weight = parse_real(&rec[2], row)?;
        if weight <= 0.0 {
            return Err(Error::Row {
                row,
                message: format!("weight {weight} is not positive"),
            });
        }
        let values = (0..dim)
            .map(|j| parse_real(&rec[j + 3], row))
            .collect::<Result<Vec<_>>>()?;
        rows.push(TrainingRow {
            id,
            label,
            weight,
            features: FeatureVector::new(values)?,
        });
    }
    Ok(TrainingSet { dim, rows })
}

pub fn load_training_set(path: impl AsRef<Path>, dim: usize) -> Result<TrainingSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_training_set(file, dim)
}
