use serde::{Deserialize, Serialize};

use super::{check_query, check_threshold, margin_scale_from, Gate};
use crate::stats::euclidean;
use crate::{Error, Result};

/// Local distance to fraud: Euclidean distance from the query to its k-th
/// nearest fraud reference point, by exhaustive scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnDensityGate {
    pub reference: Vec<Vec<f64>>,
    pub k: usize,
    pub tau: Option<f64>,
    pub margin_scale: f64,
}

/// Store the standardized fraud set as the reference. The margin scale is
/// the MAD of leave-one-out k-th neighbor distances within the fraud set
/// (1 if that set is too small or the MAD is zero).
pub fn fit_knn<R: AsRef<[f64]>>(fraud: &[R], k: usize) -> Result<KnnDensityGate> {
    if fraud.is_empty() {
        return Err(Error::InvalidInput(
            "k-NN gate needs a non-empty fraud set".into(),
        ));
    }
    if k == 0 || k > fraud.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} outside 1..={} for the k-NN gate",
            fraud.len()
        )));
    }
    let dim = fraud[0].as_ref().len();
    let reference: Vec<Vec<f64>> = fraud.iter().map(|r| r.as_ref().to_vec()).collect();
    for r in &reference {
        check_query(r, dim)?;
    }
    let mut gate = KnnDensityGate {
        reference,
        k,
        tau: None,
        margin_scale: 1.0,
    };
    if gate.reference.len() > k {
        let loo: Vec<f64> = (0..gate.reference.len())
            .map(|i| gate.kth_distance(&gate.reference[i], Some(i)))
            .collect();
        gate.margin_scale = margin_scale_from(&loo);
    }
    Ok(gate)
}

impl KnnDensityGate {
    pub fn dim(&self) -> usize {
        self.reference.first().map_or(0, Vec::len)
    }

    fn kth_distance(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let mut dists: Vec<f64> = self
            .reference
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, r)| euclidean(x, r))
            .collect();
        let (_, kth, _) = dists.select_nth_unstable_by(self.k - 1, f64::total_cmp);
        *kth
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.reference.is_empty() {
            return Err(Error::InvalidInput("empty k-NN reference set".into()));
        }
        if self.k == 0 || self.k > self.reference.len() {
            return Err(Error::InvalidInput("k outside 1..=|reference|".into()));
        }
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::InvalidInput("zero-dimensional reference".into()));
        }
        for r in &self.reference {
            check_query(r, dim)?;
        }
        check_threshold(self.tau, self.margin_scale)
    }
}

impl Gate for KnnDensityGate {
    fn name(&self) -> &str {
        "knn"
    }

    fn score(&self, x: &[f64]) -> Result<f64> {
        check_query(x, self.dim())?;
        Ok(self.kth_distance(x, None))
    }

    fn threshold(&self) -> Option<f64> {
        self.tau
    }

    fn set_threshold(&mut self, tau: f64) {
        self.tau = Some(tau);
    }

    fn margin_scale(&self) -> f64 {
        self.margin_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_larger_than_reference_is_rejected() {
        let fraud = vec![vec![0.0]; 5];
        assert!(fit_knn(&fraud, 6).is_err());
        assert!(fit_knn(&fraud, 0).is_err());
        assert!(fit_knn::<Vec<f64>>(&[], 1).is_err());
    }

    #[test]
    fn hand_distances() {
        let g = fit_knn(&[vec![0.0], vec![10.0]], 1).unwrap();
        assert_eq!(g.score(&[4.0]).unwrap(), 4.0);
        assert_eq!(g.score(&[10.0]).unwrap(), 0.0);

        let g = fit_knn(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 0.0]], 2).unwrap();
        assert_eq!(g.score(&[0.0, 0.0]).unwrap(), 1.0);

        let g = fit_knn(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 0.0]], 3).unwrap();
        assert_eq!(g.score(&[0.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn leave_one_out_margin_scale() {
        // LOO 1-NN distances on {0, 1, 3, 6}: 1, 1, 2, 3 -> median 1.5, MAD 0.5
        let g = fit_knn(&[vec![0.0], vec![1.0], vec![3.0], vec![6.0]], 1).unwrap();
        assert_eq!(g.margin_scale, 0.5);
        // k = |fraud| leaves no LOO neighbor set of size k
        let g = fit_knn(&[vec![0.0], vec![1.0]], 2).unwrap();
        assert_eq!(g.margin_scale, 1.0);
    }
}
