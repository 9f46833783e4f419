#![no_main]

use libfuzzer_sys::fuzz_target;
use resprop::dataset::{read_features, row_normalize};

fuzz_target!(|data: &[u8]| {
    if let Ok(mut x) = read_features(data, "features.csv") {
        row_normalize(&mut x);
    }
});
