#![no_main]

use libfuzzer_sys::fuzz_target;
use mmctune::workbench::FeasibilityModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = FeasibilityModel::from_text(text) {
        assert_eq!(
            FeasibilityModel::from_text(&m.to_text()).unwrap().to_text(),
            m.to_text()
        );
    }
});
