#![no_main]

use libfuzzer_sys::fuzz_target;
use sage_core::gates::{gates_from_json, Gate};
use sage_core::pipeline::GatesArtifact;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(gates) = gates_from_json(text) {
        for g in &gates {
            let x = vec![0.5; g.dim()];
            let _ = g.score(&x);
            let _ = g.evaluate(&x);
        }
    }
    let _ = GatesArtifact::from_json(text);
});
