use std::collections::BTreeMap;

use proptest::prelude::*;
use sage_core::sampler::{allocate, draw};
use sage_core::simhash::StratumTable;

fn table(pops: &[(&str, usize)]) -> StratumTable {
    let buckets: BTreeMap<String, Vec<String>> = pops
        .iter()
        .map(|(k, p)| {
            (
                k.to_string(),
                (0..*p).map(|i| format!("{k}-{i:05}")).collect(),
            )
        })
        .collect();
    let bits = pops.first().map_or(1, |(k, _)| k.len());
    StratumTable::new(bits, buckets).unwrap()
}

fn keyed(pops: &[usize]) -> Vec<(String, usize)> {
    pops.iter()
        .enumerate()
        .map(|(i, p)| (format!("{i:08b}"), *p))
        .collect()
}

fn table_of(pops: &[(String, usize)]) -> StratumTable {
    let refs: Vec<(&str, usize)> = pops.iter().map(|(k, p)| (k.as_str(), *p)).collect();
    table(&refs)
}

/// Floors first, then the remainder by largest fractional part of the
/// real-valued proportional share, ties to the smaller key.
fn hamilton(pops: &[(String, usize)], n: usize, f: usize) -> Vec<usize> {
    let base: Vec<usize> = pops.iter().map(|(_, p)| f.min(*p)).collect();
    let cap: Vec<f64> = pops
        .iter()
        .zip(&base)
        .map(|((_, p), b)| (p - b) as f64)
        .collect();
    let total: f64 = cap.iter().sum();
    let r = n.saturating_sub(base.iter().sum());
    if total == 0.0 || r as f64 >= total {
        return pops
            .iter()
            .zip(&base)
            .map(|((_, p), b)| if total == 0.0 { *b } else { *p })
            .collect();
    }
    let shares: Vec<f64> = cap.iter().map(|c| r as f64 * c / total).collect();
    let mut q: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..pops.len()).collect();
    // distinct remainders differ by at least 1/total (total < 8000 here),
    // so anything closer than 1e-9 is an exact tie lost to rounding
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        let by_frac = if (fa - fb).abs() < 1e-9 {
            std::cmp::Ordering::Equal
        } else {
            fb.partial_cmp(&fa).unwrap()
        };
        by_frac.then(pops[a].0.cmp(&pops[b].0))
    });
    let left = r - q.iter().sum::<usize>();
    for &i in order.iter().take(left) {
        q[i] += 1;
    }
    q.iter().zip(&base).map(|(a, b)| a + b).collect()
}

#[test]
fn floors_then_proportional_remainder() {
    let t = table(&[("00", 900), ("01", 90), ("10", 10)]);
    let plan = allocate(&t, 100, 2);
    // floors 2+2+2, then 94 seats over capacities 898/88/8:
    // shares 84.92, 8.32, 0.76 -> remainders give A and C the last two seats
    assert_eq!(
        (plan.quota("00"), plan.quota("01"), plan.quota("10")),
        (87, 10, 3)
    );
    assert_eq!(plan.realized_total, 100);
    let ids = draw(&plan, &t, 3).unwrap();
    assert_eq!(ids.len(), 100);
    for (k, q) in [("00", 87), ("01", 10), ("10", 3)] {
        assert_eq!(
            ids.iter()
                .filter(|id| id.starts_with(&format!("{k}-")))
                .count(),
            q
        );
    }
}

#[test]
fn pure_proportional_and_capped_examples() {
    let plan = allocate(&table(&[("00", 50)]), 10, 0);
    assert_eq!(plan.quota("00"), 10);
    let plan = allocate(&table(&[("00", 1), ("01", 1)]), 10, 2);
    assert_eq!((plan.quota("00"), plan.quota("01")), (1, 1));
    assert!(!plan.overshoot);
}

#[test]
fn floors_may_exceed_budget() {
    let plan = allocate(&table(&[("00", 10), ("01", 10), ("10", 10)]), 4, 3);
    assert_eq!(plan.realized_total, 9);
    assert!(plan.overshoot);
}

#[test]
fn full_bucket_and_repeatable_draws() {
    let t = table(&[("00", 5), ("01", 40)]);
    let plan = allocate(&t, 25, 5);
    let a = draw(&plan, &t, 77).unwrap();
    assert_eq!(a, draw(&plan, &t, 77).unwrap());
    assert_eq!(a.iter().filter(|id| id.starts_with("00-")).count(), 5);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
}

proptest! {
    #[test]
    fn matches_float_oracle(pops in prop::collection::vec(1usize..500, 1..16), n in 1usize..4000, f in 0usize..30) {
        let p = keyed(&pops);
        let plan = allocate(&table_of(&p), n, f);
        let got: Vec<usize> = p.iter().map(|(k, _)| plan.quota(k)).collect();
        prop_assert_eq!(got, hamilton(&p, n, f));
    }

    #[test]
    fn coverage_and_bounds(pops in prop::collection::vec(1usize..500, 1..16), n in 1usize..4000, f in 0usize..30, seed in 0u64..50) {
        let p = keyed(&pops);
        let t = table_of(&p);
        let plan = allocate(&t, n, f);
        let floors: usize = pops.iter().map(|q| f.min(*q)).sum();
        prop_assert!(plan.realized_total <= n.max(floors));
        let ids = draw(&plan, &t, seed).unwrap();
        for (k, pop) in &p {
            let got = ids.iter().filter(|id| id.starts_with(&format!("{k}-"))).count();
            prop_assert_eq!(got, plan.quota(k));
            prop_assert!(got >= f.min(*pop) && got <= *pop);
        }
        let mut d = ids.clone();
        d.dedup();
        prop_assert_eq!(d.len(), ids.len());
    }

    #[test]
    fn proportional_within_one_seat(pops in prop::collection::vec(1usize..500, 1..16), frac in 0.0f64..1.0) {
        let p = keyed(&pops);
        let total: usize = pops.iter().sum();
        let n = ((total as f64 * frac) as usize).max(1);
        let plan = allocate(&table_of(&p), n, 0);
        for (k, pop) in &p {
            let exact = n as f64 * *pop as f64 / total as f64;
            prop_assert!((plan.quota(k) as f64 - exact).abs() < 1.0);
        }
    }

    #[test]
    fn raising_floor_keeps_rare_quotas(pops in prop::collection::vec(1usize..300, 1..12), n in 1usize..2000, f in 0usize..20, df in 1usize..20) {
        let p = keyed(&pops);
        let t = table_of(&p);
        let lo = allocate(&t, n, f);
        let hi = allocate(&t, n, f + df);
        for (k, pop) in &p {
            if *pop <= f + df {
                prop_assert!(hi.quota(k) >= lo.quota(k));
            }
        }
    }
}
