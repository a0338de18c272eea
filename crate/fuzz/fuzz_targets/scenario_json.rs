#![no_main]

use libfuzzer_sys::fuzz_target;
use sage_core::datagen::{generate, ScenarioConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mut sc) = ScenarioConfig::from_json(text) {
        let back = ScenarioConfig::from_json(&sc.to_json().unwrap()).unwrap();
        assert_eq!(back, sc);
        if sc.dim <= 16 {
            sc.n = sc.n.min(64);
            let _ = generate(&sc);
        }
    }
});
