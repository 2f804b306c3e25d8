#![no_main]

use gopp::format::{parse_stack, parse_stiefel_stack, write_stack};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(stack) = parse_stack(text) {
        let again = parse_stack(&write_stack(&stack)).expect("written stack reparses");
        assert_eq!(stack.as_matrix().shape(), again.as_matrix().shape());
    }
    let _ = parse_stiefel_stack(text);
});
