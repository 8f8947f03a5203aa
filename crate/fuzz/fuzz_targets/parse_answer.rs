#![no_main]

use grounding_core::parsing::parse_answer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for cot in [false, true] {
        if let Ok(parsed) = parse_answer(text, 840.0, cot) {
            let a = parsed.answer;
            assert!(0.0 <= a.start_s && a.start_s <= a.end_s && a.end_s <= 840.0);
            // re-parsing the rendered template is a fixed point
            let again = parse_answer(&parsed.to_template_json(), 840.0, true)
                .expect("rendered answer parses");
            assert_eq!(again.answer, a);
        }
    }
});
