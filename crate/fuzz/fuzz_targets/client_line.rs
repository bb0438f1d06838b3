#![no_main]

use libfuzzer_sys::fuzz_target;
use magvine_teleop::protocol::{parse_client_line, Message};

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_client_line(line);
    if let Ok(msg) = Message::parse(line) {
        let again = Message::parse(&msg.to_line()).expect("reparse");
        assert_eq!(again.to_line(), msg.to_line());
    }
});
