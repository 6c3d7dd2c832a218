#![no_main]

use libfuzzer_sys::fuzz_target;
use xr23d::ingest::{manifest_to_jsonl, parse_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_manifest(text) {
        // Accepted manifests survive a write/read round trip.
        let again = parse_manifest(&manifest_to_jsonl(&records)).expect("re-parse");
        assert_eq!(again.len(), records.len());
    }
});
