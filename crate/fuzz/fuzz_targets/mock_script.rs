#![no_main]

use grounding_core::llm::{CompletionRequest, Gateway, MockGateway, MockScript};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(script) = MockScript::from_json_str(text) {
        let first = script
            .entries
            .first()
            .map(|e| (e.video_id.clone(), e.query.clone()));
        let mock = MockGateway::new(script);
        if let Some((v, q)) = first {
            assert!(mock
                .complete(&CompletionRequest::new("p").with_tag(v, q))
                .is_ok());
        }
    }
});
