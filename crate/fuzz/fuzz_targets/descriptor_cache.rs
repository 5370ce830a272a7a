#![no_main]

use libfuzzer_sys::fuzz_target;
use mmctune::vision::{features_from_bytes, features_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(fs) = features_from_bytes(data) {
        assert_eq!(features_to_bytes(&fs), data);
    }
});
