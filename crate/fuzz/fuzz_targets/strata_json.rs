#![no_main]

use libfuzzer_sys::fuzz_target;
use sage_core::sampler::{allocate, draw};
use sage_core::simhash::StratumTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = StratumTable::from_json(text) {
        let plan = allocate(&t, 10, 2);
        let ids = draw(&plan, &t, 1).unwrap();
        assert_eq!(ids.len(), plan.realized_total);
    }
});
