#![no_main]

use libfuzzer_sys::fuzz_target;
use mmctune::workbench::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::from_text(text) {
        assert_eq!(Manifest::from_text(&m.to_text()).unwrap().to_text(), m.to_text());
    }
});
