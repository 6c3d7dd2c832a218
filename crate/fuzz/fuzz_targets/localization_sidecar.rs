#![no_main]

use libfuzzer_sys::fuzz_target;
use xr23d::morph::femur::parse_localization_sidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_localization_sidecar(text);
    }
});
