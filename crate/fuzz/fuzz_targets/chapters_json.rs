#![no_main]

use grounding_core::ingest::parse_chapters_json;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        _ = parse_chapters_json(text);
    }
});
