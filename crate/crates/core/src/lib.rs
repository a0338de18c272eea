//! Confident-negative harvesting for positive-unlabeled learning.
//!
//! The pipeline stratifies an unlabeled population with SimHash signatures,
//! draws a floor-constrained sample across the resulting buckets, and runs
//! every sampled candidate through an ensemble of statistical gates fitted
//! on the labeled positives. Candidates that collect enough gate votes are
//! exported as weighted negatives for a downstream classifier.
//!
//! Module map:
//!
//! - [`data`]: dataset model, CSV I/O, feature standardization
//! - [`simhash`]: random-hyperplane signatures and bucket tables
//! - [`sampler`]: floor-constrained largest-remainder allocation and draws
//! - [`gates`]: Ledoit-Wolf Mahalanobis and k-th-neighbor distance gates
//! - [`ensemble`]: k-of-n voting, confidence weights, harvest and export
//! - [`calibration`]: splits, threshold sweeps, contamination estimators
//! - [`datagen`]: seeded Gaussian-mixture scenarios with hidden truth
//! - [`eval`]: linear probe, precision-recall, coverage, ablation arms
//! - [`pipeline`]: JSON-configured end-to-end and stagewise runs

pub mod calibration;
pub mod data;
pub mod datagen;
pub mod ensemble;
mod error;
pub mod eval;
pub mod gates;
pub mod logistic;
pub mod pipeline;
pub mod sampler;
pub mod simhash;
pub mod stats;

pub use error::{Error, Result};
