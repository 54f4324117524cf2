#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = sida::data::parse_view_csv(text) {
            assert_eq!(m.data.ncols(), m.names.len());
        }
    }
});
