#![no_main]

use libfuzzer_sys::fuzz_target;
use mmctune::workbench::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = RunConfig::parse(text) {
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }
});
