#![no_main]

use grounding_core::prompting::IclExample;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(example) = IclExample::from_json_str(text) {
        let again = IclExample::from_json_str(&example.to_json_string())
            .expect("written example reads back");
        assert_eq!(again, example);
    }
});
