#![no_main]

use libfuzzer_sys::fuzz_target;
use magvine::experiments::parse_range;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(vals) = parse_range(text) {
        assert!(!vals.is_empty());
        assert!(vals.iter().all(|v| v.is_finite()));
    }
});
