#![no_main]

use gopp::format::{parse_cloud_set, write_cloud_set};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = parse_cloud_set(text) {
        let again = parse_cloud_set(&write_cloud_set(&set)).expect("written set reparses");
        assert_eq!((set.n(), set.d(), set.m()), (again.n(), again.d(), again.m()));
    }
});
