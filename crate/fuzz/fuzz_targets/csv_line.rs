#![no_main]

use flowwatch::ingest::csv::{format_line, parse_line};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rec) = parse_line(line) {
        let text = format_line(&rec);
        assert_eq!(parse_line(&text).as_ref(), Ok(&rec), "{text}");
    }
});
