#![no_main]

use libfuzzer_sys::fuzz_target;
use magvine::trace::{parse_trace, trace_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = parse_trace(text) {
        let written = trace_to_string(&rows);
        let back = parse_trace(&written).expect("reparse");
        assert_eq!(trace_to_string(&back), written);
    }
});
