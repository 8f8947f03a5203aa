#![no_main]

use grounding_core::ingest::ManifestDoc;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(doc) = ManifestDoc::from_json_str(text) {
        _ = doc.resolve_queries();
    }
});
