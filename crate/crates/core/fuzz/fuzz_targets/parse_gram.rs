#![no_main]

use gopp::format::{parse_gram, write_gram};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = parse_gram(text) {
        // mirrored upper triangle must survive a round trip
        let again = parse_gram(&write_gram(&c)).expect("written gram reparses");
        assert_eq!(c.as_matrix(), again.as_matrix());
    }
});
