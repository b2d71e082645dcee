#![no_main]

use libfuzzer_sys::fuzz_target;
use slrnet::config::{parse_overrides, ExperimentConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let items: Vec<&str> = text.lines().collect();
    if let Ok(pairs) = parse_overrides(&items) {
        let _ = ExperimentConfig::default().with_overrides(&pairs);
    }
});
