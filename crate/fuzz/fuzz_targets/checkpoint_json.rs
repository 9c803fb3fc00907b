#![no_main]

use libfuzzer_sys::fuzz_target;
use sksd::models::IcaCheckpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cp) = IcaCheckpoint::from_json(text) {
        assert_eq!(IcaCheckpoint::from_json(&cp.to_json()).expect("round trip"), cp);
    }
});
