#![no_main]

use libfuzzer_sys::fuzz_target;
use magvine_teleop::record::{acked_commands, parse_recording};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(messages) = parse_recording(text) {
        let _ = acked_commands(&messages);
    }
});
