#![no_main]

use libfuzzer_sys::fuzz_target;
use xr23d::volume::nifti;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = nifti::decode(data) {
        assert_eq!(grid.data().len(), grid.geometry().len());
    }
});
