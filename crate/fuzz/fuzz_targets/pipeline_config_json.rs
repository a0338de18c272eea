#![no_main]

use libfuzzer_sys::fuzz_target;
use sage_core::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = PipelineConfig::from_json(text) {
        let _ = cfg.digest();
        let _ = cfg.voting_policy();
        let _ = cfg.split_spec();
    }
});
