//! Random-hyperplane SimHash signatures and the bucket table built from them.
//!
//! Each signature bit is the sign of the projection of a standardized
//! feature vector onto one Gaussian hyperplane normal, so two vectors at
//! angle θ agree on any given bit with probability `1 - θ/π`. Samples are
//! grouped by the first `prefix_bits` bits of their signature.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelFilter, Standardizer};
use crate::{Error, Result};

pub const MAX_BITS: usize = 256;
const WORDS: usize = MAX_BITS / 64;

/// `bits × dim` matrix of standard-normal hyperplane normals, fully
/// determined by `(dim, bits, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BankSpec", into = "BankSpec")]
pub struct ProjectionBank {
    dim: usize,
    bits: usize,
    seed: u64,
    planes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BankSpec {
    dim: usize,
    bits: usize,
    seed: u64,
}

impl TryFrom<BankSpec> for ProjectionBank {
    type Error = Error;

    fn try_from(s: BankSpec) -> Result<Self> {
        build_projections(s.dim, s.bits, s.seed)
    }
}

impl From<ProjectionBank> for BankSpec {
    fn from(b: ProjectionBank) -> Self {
        BankSpec {
            dim: b.dim,
            bits: b.bits,
            seed: b.seed,
        }
    }
}

/// Draw a projection bank. Rows are filled in order from a ChaCha8 stream
/// seeded with `seed`.
pub fn build_projections(dim: usize, bits: usize, seed: u64) -> Result<ProjectionBank> {
    if dim == 0 {
        return Err(Error::InvalidInput(
            "projection dimension must be >= 1".into(),
        ));
    }
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(Error::InvalidInput(format!(
            "signature length {bits} outside 1..={MAX_BITS}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes = (0..dim * bits)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Ok(ProjectionBank {
        dim,
        bits,
        seed,
        planes,
    })
}

impl ProjectionBank {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn plane(&self, i: usize) -> &[f64] {
        &self.planes[i * self.dim..(i + 1) * self.dim]
    }

    /// Hash a standardized vector. Ties (projection exactly 0) map to bit 1.
    pub fn signature(&self, x: &[f64]) -> Result<Signature> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signature input"));
        }
        let mut words = [0u64; WORDS];
        for i in 0..self.bits {
            let dot: f64 = self.plane(i).iter().zip(x).map(|(p, v)| p * v).sum();
            if dot >= 0.0 {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(Signature {
            words,
            len: self.bits,
        })
    }
}

pub fn signature(bank: &ProjectionBank, x: &[f64]) -> Result<Signature> {
    bank.signature(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    words: [u64; WORDS],
    len: usize,
}

impl Signature {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(
            i < self.len,
            "bit {i} out of range for {}-bit signature",
            self.len
        );
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn hamming(&self, other: &Signature) -> u32 {
        assert_eq!(self.len, other.len, "signature lengths differ");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn complement(&self) -> Signature {
        let mut words = [0u64; WORDS];
        for i in 0..self.len {
            if !self.bit(i) {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Signature {
            words,
            len: self.len,
        }
    }

    /// The first `b` bits as a `'0'`/`'1'` string.
    pub fn prefix_key(&self, b: usize) -> String {
        (0..b.min(self.len))
            .map(|i| if self.bit(i) { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.prefix_key(self.len))
    }
}

/// Partition of a population into signature-prefix buckets.
///
/// Keys are `prefix_bits`-long binary strings; each bucket lists member ids
/// in dataset order. Serializes as `{"prefix_bits": b, "buckets": {...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct StratumTable {
    prefix_bits: usize,
    buckets: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct RawTable {
    prefix_bits: usize,
    buckets: BTreeMap<String, Vec<String>>,
}

impl TryFrom<RawTable> for StratumTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        StratumTable::new(raw.prefix_bits, raw.buckets)
    }
}

impl StratumTable {
    /// Build a table, checking key shape, non-empty buckets and disjointness.
    pub fn new(prefix_bits: usize, buckets: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&prefix_bits) {
            return Err(Error::InvalidInput(format!(
                "prefix_bits {prefix_bits} outside 1..={MAX_BITS}"
            )));
        }
        let mut seen = HashSet::new();
        for (key, ids) in &buckets {
            if key.len() != prefix_bits || !key.bytes().all(|c| c == b'0' || c == b'1') {
                return Err(Error::InvalidInput(format!(
                    "bucket key {key:?} is not a {prefix_bits}-bit binary string"
                )));
            }
            if ids.is_empty() {
                return Err(Error::InvalidInput(format!("bucket {key} is empty")));
            }
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "id {id:?} appears in more than one bucket"
                    )));
                }
            }
        }
        Ok(StratumTable {
            prefix_bits,
            buckets,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn prefix_bits(&self) -> usize {
        self.prefix_bits
    }

    pub fn buckets(&self) -> &BTreeMap<String, Vec<String>> {
        &self.buckets
    }

    pub fn members(&self, key: &str) -> Option<&[String]> {
        self.buckets.get(key).map(Vec::as_slice)
    }

    pub fn counts(&self) -> BTreeMap<&str, usize> {
        self.buckets
            .iter()
            .map(|(k, v)| (k.as_str(), v.len()))
            .collect()
    }

    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn population(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }
}

/// Hash every sample of `data` selected by `subset` (after standardization)
/// and group by signature prefix. One pass, no pairwise comparisons.
pub fn stratify(
    bank: &ProjectionBank,
    data: &Dataset,
    subset: &LabelFilter,
    standardizer: &Standardizer,
    prefix_bits: usize,
) -> Result<StratumTable> {
    if prefix_bits == 0 || prefix_bits > bank.bits() {
        return Err(Error::InvalidInput(format!(
            "prefix_bits {prefix_bits} outside 1..={}",
            bank.bits()
        )));
    }
    let selected: Vec<_> = data.select(subset).collect();
    let keys = selected
        .par_iter()
        .map(|s| {
            let z = standardizer.transform(&s.features)?;
            Ok(bank.signature(&z)?.prefix_key(prefix_bits))
        })
        .collect::<Result<Vec<String>>>()?;

    let mut buckets: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (s, key) in selected.iter().zip(keys) {
        buckets.entry(key).or_default().push(s.id.clone());
    }
    Ok(StratumTable {
        prefix_bits,
        buckets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureVector, Label, Sample};

    #[test]
    fn projections_are_deterministic() {
        let a = build_projections(8, 64, 42).unwrap();
        let b = build_projections(8, 64, 42).unwrap();
        assert_eq!(a, b);
        let c = build_projections(8, 64, 43).unwrap();
        assert!(a.planes.iter().zip(&c.planes).any(|(x, y)| x != y));
    }

    #[test]
    fn projection_shape() {
        let b = build_projections(1, 4, 0).unwrap();
        assert_eq!(b.planes.len(), 4);
        assert_eq!(b.plane(3).len(), 1);
        assert!(build_projections(3, 0, 0).is_err());
        assert!(build_projections(3, 257, 0).is_err());
        assert!(build_projections(0, 4, 0).is_err());
        assert!(build_projections(3, 256, 0).is_ok());
    }

    #[test]
    fn bank_serializes_as_its_seed() {
        let b = build_projections(5, 33, 9).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, r#"{"dim":5,"bits":33,"seed":9}"#);
        let back: ProjectionBank = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn zero_vector_hashes_to_all_ones() {
        let b = build_projections(4, 100, 1).unwrap();
        let s = b.signature(&[0.0; 4]).unwrap();
        assert!((0..100).all(|i| s.bit(i)));
    }

    #[test]
    fn negation_complements_the_signature() {
        let b = build_projections(6, 200, 5).unwrap();
        let x = [0.3, -1.2, 2.0, 0.7, -0.1, 1.1];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = b.signature(&x).unwrap();
        assert_eq!(b.signature(&neg).unwrap(), s.complement());
        assert_eq!(s.hamming(&s.complement()), 200);
        assert_eq!(b.signature(&x).unwrap(), s);
    }

    #[test]
    fn signature_rejects_bad_input() {
        let b = build_projections(2, 8, 5).unwrap();
        assert!(b.signature(&[1.0]).is_err());
        assert!(b.signature(&[1.0, f64::NAN]).is_err());
    }

    fn tiny_dataset() -> Dataset {
        let rows = [[1.0, 2.0], [1.0, 2.0], [-3.0, 0.5], [0.2, -0.4], [5.0, 5.0]];
        Dataset::from_samples(
            2,
            rows.iter().enumerate().map(|(i, r)| Sample {
                id: format!("s{i}"),
                features: FeatureVector::new(r.to_vec()).unwrap(),
                label: Label::Unlabeled,
            }),
        )
        .unwrap()
    }

    #[test]
    fn one_bit_prefix_gives_at_most_two_buckets() {
        let ds = tiny_dataset();
        let bank = build_projections(2, 16, 3).unwrap();
        let t = stratify(
            &bank,
            &ds,
            &LabelFilter::default(),
            &Standardizer::identity(2),
            1,
        )
        .unwrap();
        assert!(t.num_buckets() <= 2);
        assert_eq!(t.population(), 5);
    }

    #[test]
    fn identical_vectors_share_a_bucket() {
        let ds = tiny_dataset();
        let bank = build_projections(2, 16, 3).unwrap();
        let t = stratify(
            &bank,
            &ds,
            &LabelFilter::default(),
            &Standardizer::identity(2),
            16,
        )
        .unwrap();
        let home = |id: &str| {
            t.buckets()
                .iter()
                .find(|(_, v)| v.iter().any(|x| x == id))
                .map(|(k, _)| k.clone())
                .unwrap()
        };
        assert_eq!(home("s0"), home("s1"));
        assert!(stratify(
            &bank,
            &ds,
            &LabelFilter::default(),
            &Standardizer::identity(2),
            17
        )
        .is_err());
        assert!(stratify(
            &bank,
            &ds,
            &LabelFilter::default(),
            &Standardizer::identity(2),
            0
        )
        .is_err());
    }

    #[test]
    fn table_json_shape_and_validation() {
        let ds = tiny_dataset();
        let bank = build_projections(2, 8, 3).unwrap();
        let t = stratify(
            &bank,
            &ds,
            &LabelFilter::default(),
            &Standardizer::identity(2),
            3,
        )
        .unwrap();
        let json = t.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["prefix_bits"], 3);
        assert!(v["buckets"].is_object());
        assert_eq!(StratumTable::from_json(&json).unwrap(), t);

        assert!(StratumTable::from_json(r#"{"prefix_bits":2,"buckets":{"012":["a"]}}"#).is_err());
        assert!(
            StratumTable::from_json(r#"{"prefix_bits":2,"buckets":{"01":["a"],"11":["a"]}}"#)
                .is_err()
        );
        assert!(StratumTable::from_json(r#"{"prefix_bits":2,"buckets":{"01":[]}}"#).is_err());
        assert!(StratumTable::from_json(r#"{"prefix_bits":0,"buckets":{}}"#).is_err());
    }
}
