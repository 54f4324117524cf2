#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(labels) = sida::data::parse_labels(text) {
            assert!(labels.iter().all(|&k| k >= 1));
        }
    }
});
