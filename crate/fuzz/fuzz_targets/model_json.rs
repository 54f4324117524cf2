#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = sida::DiscriminantModel::from_json(text);
        // Also the CLI path, which unwraps the manifest envelope.
        let _ = sida_cli::model_from_str(text);
    }
});
