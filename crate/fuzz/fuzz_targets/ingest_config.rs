#![no_main]

use libfuzzer_sys::fuzz_target;
use xr23d::ingest::{parse_reject_list, IngestConfig};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = IngestConfig::parse(text);
        let _ = parse_reject_list(text);
    }
});
