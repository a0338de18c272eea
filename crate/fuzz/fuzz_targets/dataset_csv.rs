#![no_main]

use libfuzzer_sys::fuzz_target;
use sage_core::data::{read_dataset, write_dataset};

// First byte picks the dimension; the rest is the CSV.
fuzz_target!(|data: &[u8]| {
    let Some((&d, body)) = data.split_first() else {
        return;
    };
    let dim = 1 + usize::from(d % 8);
    if let Ok(ds) = read_dataset(body, dim) {
        let mut out = Vec::new();
        write_dataset(&ds, &mut out).unwrap();
        let back = read_dataset(out.as_slice(), dim).unwrap();
        assert_eq!(back.len(), ds.len());
    }
});
