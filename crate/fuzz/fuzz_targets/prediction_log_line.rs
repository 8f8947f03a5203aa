#![no_main]

use grounding_core::evaluation::PredictionRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(record) = PredictionRecord::from_json_line(line) {
        let back = PredictionRecord::from_json_line(&record.to_json_line())
            .expect("written line reads back");
        assert_eq!(back, record);
    }
});
