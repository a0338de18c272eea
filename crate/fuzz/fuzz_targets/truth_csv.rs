#![no_main]

use libfuzzer_sys::fuzz_target;
use sage_core::datagen::{read_truth, write_truth};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = read_truth(data) {
        let mut out = Vec::new();
        write_truth(&t, &mut out).unwrap();
        assert_eq!(read_truth(out.as_slice()).unwrap(), t);
    }
});
