#![no_main]

use libfuzzer_sys::fuzz_target;
use sksd::config::{
    ica_from_body, split_document, variance_from_body, GofBenchmarkConfig, GofRbmConfig, SghmcSelectConfig, SvgdConfig,
};

// Every command parser sees the same document; none may panic.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok((_, body)) = split_document(text) else { return };
    let _ = GofBenchmarkConfig::from_body(body.clone());
    let _ = GofRbmConfig::from_body(body.clone());
    let _ = SvgdConfig::from_body(body.clone());
    let _ = variance_from_body(body.clone());
    let _ = SghmcSelectConfig::from_body(body.clone());
    let _ = ica_from_body(body);
});
