#![no_main]

use libfuzzer_sys::fuzz_target;
use sage_core::eval::AblationSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = AblationSpec::from_json(text) {
        assert!(!spec.resolve_arms().unwrap().is_empty());
    }
});
