//! Dataset model, CSV I/O and feature standardization.
//!
//! The on-disk format is a CSV with a mandatory header
//! `id,label,f0,...,f{d-1}`. Reals are written with the shortest
//! representation that parses back to the identical `f64`, so a
//! save/load cycle is bit-exact.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Deref;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Visible label of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fraud,
    Suspicious,
    NonFraud,
    Unlabeled,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Fraud,
        Label::Suspicious,
        Label::NonFraud,
        Label::Unlabeled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Fraud => "fraud",
            Label::Suspicious => "suspicious",
            Label::NonFraud => "nonfraud",
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fraud" => Ok(Label::Fraud),
            "suspicious" => Ok(Label::Suspicious),
            "nonfraud" => Ok(Label::NonFraud),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(Error::InvalidInput(format!("unknown label {other:?}"))),
        }
    }
}

/// Set of labels used to select a subset of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelFilter(Vec<Label>);

impl LabelFilter {
    pub fn only(label: Label) -> Self {
        LabelFilter(vec![label])
    }

    pub fn any_of(labels: &[Label]) -> Self {
        LabelFilter(labels.to_vec())
    }

    pub fn all() -> Self {
        LabelFilter(Label::ALL.to_vec())
    }

    pub fn matches(&self, label: Label) -> bool {
        self.0.contains(&label)
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }
}

impl Default for LabelFilter {
    fn default() -> Self {
        LabelFilter::only(Label::Unlabeled)
    }
}

/// Dense real-valued feature vector; every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(FeatureVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        FeatureVector::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: FeatureVector,
    pub label: Label,
}

/// An ordered collection of samples with unique ids and a fixed dimension.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        Ok(Dataset {
            dim,
            samples: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn from_samples(dim: usize, samples: impl IntoIterator<Item = Sample>) -> Result<Self> {
        let mut ds = Dataset::new(dim)?;
        for s in samples {
            ds.push(s)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: sample.features.len(),
            });
        }
        if self.index.contains_key(&sample.id) {
            return Err(Error::InvalidInput(format!("duplicate id {:?}", sample.id)));
        }
        self.index.insert(sample.id.clone(), self.samples.len());
        self.samples.push(sample);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn select<'a>(&'a self, filter: &'a LabelFilter) -> impl Iterator<Item = &'a Sample> + 'a {
        self.samples.iter().filter(move |s| filter.matches(s.label))
    }

    pub fn with_label(&self, label: Label) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.label == label)
    }
}

fn header_for(dim: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "label".to_string()];
    h.extend((0..dim).map(|i| format!("f{i}")));
    h
}

pub(crate) fn parse_real(field: &str, row: u64) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Row {
        row,
        message: format!("cannot parse {field:?} as a real number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Row {
            row,
            message: format!("non-finite value {field:?}"),
        });
    }
    Ok(v)
}

/// Render a real so that parsing it back yields the identical bits.
pub(crate) fn format_real(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn check_header(record: Option<&csv::StringRecord>, expected: &[String]) -> Result<()> {
    let Some(record) = record else {
        return Err(Error::Row {
            row: 1,
            message: "missing header".into(),
        });
    };
    if record.len() != expected.len() || record.iter().zip(expected).any(|(a, b)| a.trim() != b) {
        return Err(Error::Row {
            row: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                record.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

/// Parse a dataset CSV from any reader. Row numbers in errors are 1-based
/// file lines, so the header is row 1 and the first sample is row 2.
pub fn read_dataset<R: Read>(reader: R, dim: usize) -> Result<Dataset> {
    let mut ds = Dataset::new(dim)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records.next().transpose()?;
    check_header(header.as_ref(), &header_for(dim))?;

    for (i, rec) in records.enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != dim + 2 {
            return Err(Error::Row {
                row,
                message: format!("expected {} columns, found {}", dim + 2, rec.len()),
            });
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Row {
                row,
                message: "empty id".into(),
            });
        }
        let label: Label = rec[1].trim().parse().map_err(|e: Error| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let values = (0..dim)
            .map(|j| parse_real(&rec[j + 2], row))
            .collect::<Result<Vec<_>>>()?;
        ds.push(Sample {
            id,
            features: FeatureVector(values),
            label,
        })
        .map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
    }
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>, dim: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, dim)
}

pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header_for(data.dim))?;
    let mut row = Vec::with_capacity(data.dim + 2);
    for s in &data.samples {
        row.clear();
        row.push(s.id.clone());
        row.push(s.label.as_str().to_string());
        row.extend(s.features.iter().map(|v| format_real(*v)));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(data, std::io::BufWriter::new(file))
}

/// Per-feature affine rescaling to zero mean and unit population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Identity transform of dimension `dim`.
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fit on raw vectors. Features whose spread is zero (to rounding)
    /// keep scale 1 so they survive as a constant column.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "standardizer needs at least 2 samples, got {}",
                rows.len()
            )));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((acc, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(v, m)| {
                let sd = (v / n).sqrt();
                if sd <= 1e-12 * (1.0 + m.abs()) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn transform(&self, x: &[f64]) -> Result<FeatureVector> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        FeatureVector::new(
            x.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
        )
    }
}

/// Fit a [`Standardizer`] on the samples of `data` selected by `subset`.
pub fn fit_standardizer(data: &Dataset, subset: &LabelFilter) -> Result<Standardizer> {
    Standardizer::fit(
        data.select(subset).map(|s| s.features.as_slice()),
        data.dim(),
    )
}

pub fn standardize(s: &Standardizer, x: &[f64]) -> Result<FeatureVector> {
    s.transform(x)
}
