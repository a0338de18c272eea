#![no_main]

use libfuzzer_sys::fuzz_target;
use sage_core::ensemble::{read_training_set, write_training_set};

fuzz_target!(|data: &[u8]| {
    let Some((&d, body)) = data.split_first() else {
        return;
    };
    let dim = 1 + usize::from(d % 8);
    if let Ok(set) = read_training_set(body, dim) {
        let mut out = Vec::new();
        write_training_set(&set, &mut out).unwrap();
        assert_eq!(read_training_set(out.as_slice(), dim).unwrap(), set);
    }
});
