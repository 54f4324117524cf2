#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // First byte picks the vertex count so out-of-range edges get exercised.
    let Some((&p, rest)) = data.split_first() else { return };
    if let Ok(text) = std::str::from_utf8(rest) {
        if let Ok(g) = sida::graph::parse_edge_list(text, p as usize) {
            let _ = sida::graph::build_normalized_laplacian(&g);
        }
    }
});
