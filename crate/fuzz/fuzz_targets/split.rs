#![no_main]

use libfuzzer_sys::fuzz_target;
use resprop::dataset::read_split;

fuzz_target!(|data: &[u8]| {
    if let Ok(split) = read_split(data, "split.json") {
        let n = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .max()
            .map_or(0, |m| m + 1);
        if n <= 1 << 20 {
            let _ = split.validate(n);
            let _ = split.non_train(n);
        }
    }
});
