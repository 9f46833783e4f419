#![no_main]

use libfuzzer_sys::fuzz_target;
use resprop::dataset::{one_hot, read_labels};

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = read_labels(data, "labels.csv") {
        let nodes: Vec<usize> = (0..labels.len()).collect();
        let _ = one_hot(&labels, 8, &nodes);
    }
});
