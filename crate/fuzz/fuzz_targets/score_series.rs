#![no_main]

use grounding_core::baselines::{threshold_baseline, ScoreSeries};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(series) = ScoreSeries::from_json_str(text) {
        if let Ok(span) = threshold_baseline(&series, 0.05, 900.0) {
            assert!(0.0 <= span.start_s && span.start_s <= span.end_s && span.end_s <= 900.0);
        }
    }
});
