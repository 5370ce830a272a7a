#![no_main]

use libfuzzer_sys::fuzz_target;
use mmctune::forest::Forest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(f) = Forest::from_text(text) {
        assert_eq!(Forest::from_text(&f.to_text()).unwrap().to_text(), f.to_text());
    }
});
