#![no_main]

use libfuzzer_sys::fuzz_target;
use sksd::discrepancy::SliceConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(slices) = SliceConfig::from_json(text) {
        slices.validate().expect("parsed slices are valid");
        let again = SliceConfig::from_json(&slices.to_json()).expect("round trip");
        assert_eq!(again.len(), slices.len());
    }
});
