#![no_main]

use grounding_core::parsing::extract_json_object;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Some(obj) = extract_json_object(text) {
        assert!(obj.starts_with('{') && obj.ends_with('}'));
        assert!(text.contains(obj));
    }
});
