#![no_main]

use gopp::format::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_config(text) {
        for (key, _) in entries {
            assert!(!key.is_empty() && !key.contains('_'));
        }
    }
});
