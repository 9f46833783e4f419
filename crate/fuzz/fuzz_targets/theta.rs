#![no_main]

use libfuzzer_sys::fuzz_target;
use resprop::gntk::{decode_theta, encode_theta};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_theta(data) {
        let bytes = encode_theta(m.view()).expect("decoded matrices re-encode");
        assert_eq!(bytes.as_slice(), data);
    }
});
