//! Floor-constrained proportional allocation over strata, and the seeded
//! per-bucket draw that realizes it.
//!
//! Allocation runs in two steps. Every nonempty bucket first receives
//! `min(floor, pop)`. Whatever budget remains is split over the leftover
//! capacity `pop - base` with the largest-remainder (Hamilton) method.
//! Floors win over the budget: if they already exceed it, the plan
//! overshoots and says so.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::simhash::StratumTable;
use crate::stats::fnv1a64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub budget: usize,
    pub floor: usize,
    pub quotas: BTreeMap<String, usize>,
    /// Sum of quotas.
    pub realized_total: usize,
    /// Set when the floors alone forced the plan past `budget`.
    pub overshoot: bool,
}

impl AllocationPlan {
    pub fn quota(&self, key: &str) -> usize {
        self.quotas.get(key).copied().unwrap_or(0)
    }
}

/// Largest-remainder apportionment of `seats` proportionally to `weights`.
///
/// Ties on the fractional remainder go to the earlier entry, so callers
/// control tie-breaking through ordering. Exact integer arithmetic is used
/// throughout. When `seats` covers the total weight every entry receives
/// its full weight.
pub fn largest_remainder(seats: u64, weights: &[u64]) -> Vec<u64> {
    let total: u128 = weights.iter().map(|&w| u128::from(w)).sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    if u128::from(seats) >= total {
        return weights.to_vec();
    }
    let seats = u128::from(seats);
    let mut out = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    let mut assigned: u128 = 0;
    for (i, &w) in weights.iter().enumerate() {
        let num = seats * u128::from(w);
        let q = num / total;
        out.push(q as u64);
        assigned += q;
        rems.push((num % total, i));
    }
    // larger remainder first, then earlier index
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take((seats - assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Allocate `budget` samples over the buckets of `table` with a per-bucket
/// `floor`.
pub fn allocate(table: &StratumTable, budget: usize, floor: usize) -> AllocationPlan {
    // BTreeMap order is lexicographic by key, which is the tie-break order.
    let pops: Vec<(&String, usize)> = table.buckets().iter().map(|(k, v)| (k, v.len())).collect();
    let base: Vec<usize> = pops.iter().map(|(_, p)| floor.min(*p)).collect();
    let base_total: usize = base.iter().sum();
    let remaining = budget.saturating_sub(base_total);
    let capacity: Vec<u64> = pops
        .iter()
        .zip(&base)
        .map(|((_, p), b)| (p - b) as u64)
        .collect();
    let extra = largest_remainder(remaining as u64, &capacity);

    let quotas: BTreeMap<String, usize> = pops
        .iter()
        .zip(base.iter().zip(&extra))
        .map(|((k, _), (b, e))| ((*k).clone(), b + *e as usize))
        .collect();
    let realized_total = quotas.values().sum();
    AllocationPlan {
        budget,
        floor,
        quotas,
        realized_total,
        overshoot: base_total > budget,
    }
}

fn bucket_seed(seed: u64, key: &str) -> u64 {
    seed ^ fnv1a64(key.as_bytes())
}

/// Draw each bucket's quota uniformly without replacement. Each bucket has
/// its own generator seeded from `seed` and the bucket key, so the result
/// does not depend on iteration order. Returned ids are sorted.
pub fn draw(plan: &AllocationPlan, table: &StratumTable, seed: u64) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(plan.realized_total);
    for (key, &quota) in &plan.quotas {
        let members = table.members(key).ok_or_else(|| {
            Error::Consistency(format!("plan bucket {key} is not in the stratum table"))
        })?;
        if quota > members.len() {
            return Err(Error::Consistency(format!(
                "quota {quota} exceeds population {} of bucket {key}",
                members.len()
            )));
        }
        if quota == members.len() {
            out.extend(members.iter().cloned());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(bucket_seed(seed, key));
        out.extend(
            index::sample(&mut rng, members.len(), quota)
                .into_iter()
                .map(|i| members[i].clone()),
        );
    }
    out.sort_unstable();
    Ok(out)
}

/// Uniform simple random sample of `n` ids (or all of them if fewer),
/// returned sorted. Baseline sampler for ablations.
pub fn draw_uniform(ids: &[String], n: usize, seed: u64) -> Vec<String> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort_unstable();
    let mut out: Vec<String> = if n >= sorted.len() {
        sorted.into_iter().cloned().collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        index::sample(&mut rng, sorted.len(), n)
            .into_iter()
            .map(|i| sorted[i].clone())
            .collect()
    };
    out.sort_unstable();
    out
}
