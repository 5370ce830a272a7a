#![no_main]

use libfuzzer_sys::fuzz_target;
use mmctune::runner::SolutionRecord;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = SolutionRecord::from_json(text) {
        let again = SolutionRecord::from_json(&r.to_json()).unwrap();
        assert_eq!(again.to_json(), r.to_json());
    }
});
