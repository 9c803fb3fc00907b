#![no_main]

use libfuzzer_sys::fuzz_target;
use sksd::targets::{Score, ScoreModel};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = ScoreModel::from_json(text) {
        // A model that parses must round-trip and score the origin.
        let again = ScoreModel::from_json(&model.to_json()).expect("round trip");
        assert_eq!(again.dim(), model.dim());
        if model.dim() <= 64 {
            let _ = model.score(&vec![0.0; model.dim()]);
        }
    }
});
