#![no_main]

use libfuzzer_sys::fuzz_target;
use mmctune::geometry::DesignVector;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = DesignVector::from_text(text) {
        let again = DesignVector::from_text(&d.to_text()).unwrap();
        assert_eq!(again.to_text(), d.to_text());
    }
});
