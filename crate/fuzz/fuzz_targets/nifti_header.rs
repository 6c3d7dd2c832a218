#![no_main]

use libfuzzer_sys::fuzz_target;
use xr23d::volume::nifti;

fuzz_target!(|data: &[u8]| {
    let _ = nifti::parse_header(data);
});
