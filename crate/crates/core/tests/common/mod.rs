#![allow(dead_code)]

use sage_core::data::{Dataset, FeatureVector, Label, Sample};
use sage_core::pipeline::PipelineConfig;

pub fn sample(id: &str, label: Label, x: Vec<f64>) -> Sample {
    Sample {
        id: id.into(),
        features: FeatureVector::new(x).unwrap(),
        label,
    }
}

pub fn dataset(dim: usize, rows: Vec<(Label, Vec<f64>)>) -> Dataset {
    Dataset::from_samples(
        dim,
        rows.into_iter()
            .enumerate()
            .map(|(i, (l, x))| sample(&format!("r{i:05}"), l, x)),
    )
    .unwrap()
}

/// Pipeline config for in-memory runs on a generated 8-dimensional scenario.
pub fn pipeline_config(budget: usize, floor: usize, estimator: &str) -> PipelineConfig {
    let json = format!(
        r#"{{
            "dataset": "unused.csv",
            "truth": "unused_truth.csv",
            "dim": 8,
            "standardize_on": ["unlabeled"],
            "simhash": {{"bits": 64, "prefix_bits": 12, "seed": 11}},
            "sampler": {{"budget": {budget}, "floor": {floor}, "seed": 13}},
            "calibration": {{"split_seed": 17, "estimator": {estimator}}}
        }}"#
    );
    PipelineConfig::from_json(&json).unwrap()
}

pub const TRUE_LABEL: &str = r#"{"method": "true-label"}"#;
