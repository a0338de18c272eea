#![no_main]

use libfuzzer_sys::fuzz_target;
use sage_core::pipeline::{read_ids, write_ids};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ids) = read_ids(text) {
        assert_eq!(read_ids(&write_ids(&ids)).unwrap(), ids);
    }
});
