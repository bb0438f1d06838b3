#![no_main]

use libfuzzer_sys::fuzz_target;
use magvine::scenario::Scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sc) = Scenario::from_json(text) {
        // Anything accepted must survive its own serialization.
        let back = Scenario::from_json(&sc.to_json()).expect("reparse");
        assert_eq!(back.to_json(), sc.to_json());
    }
});
