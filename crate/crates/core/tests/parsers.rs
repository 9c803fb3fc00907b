//! Parser robustness: arbitrary input never panics, and the fuzz corpus
//! seeds are accepted.

use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;
use sksd::config::{
    ica_from_body, split_document, variance_from_body, GofBenchmarkConfig, GofRbmConfig, SghmcSelectConfig, SvgdConfig,
};
use sksd::discrepancy::SliceConfig;
use sksd::models::IcaCheckpoint;
use sksd::targets::ScoreModel;

fn all_parsers(text: &str) {
    let _ = ScoreModel::from_json(text);
    let _ = SliceConfig::from_json(text);
    let _ = IcaCheckpoint::from_json(text);
    if let Ok((_, body)) = split_document(text) {
        let _ = GofBenchmarkConfig::from_body(body.clone());
        let _ = GofRbmConfig::from_body(body.clone());
        let _ = SvgdConfig::from_body(body.clone());
        let _ = variance_from_body(body.clone());
        let _ = SghmcSelectConfig::from_body(body.clone());
        let _ = ica_from_body(body);
    }
}

fn corpus(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.iter().map(|p| fs::read_to_string(p).unwrap()).collect()
}

#[test]
fn corpus_seeds_parse() {
    for text in corpus("model_json") {
        ScoreModel::from_json(&text).unwrap();
    }
    for text in corpus("slice_json") {
        SliceConfig::from_json(&text).unwrap();
    }
    for text in corpus("checkpoint_json") {
        IcaCheckpoint::from_json(&text).unwrap();
    }
    let seeds = corpus("config");
    assert!(seeds.len() >= 6);
    for text in seeds {
        let (_, body) = split_document(&text).unwrap();
        let ok = [
            GofBenchmarkConfig::from_body(body.clone()).is_ok(),
            GofRbmConfig::from_body(body.clone()).is_ok(),
            SvgdConfig::from_body(body.clone()).is_ok(),
            variance_from_body(body.clone()).is_ok(),
            SghmcSelectConfig::from_body(body.clone()).is_ok(),
            ica_from_body(body).is_ok(),
        ];
        assert_eq!(ok.iter().filter(|b| **b).count(), 1, "{text}");
    }
}

fn json_fragment() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("null".to_string()),
        any::<bool>().prop_map(|b| b.to_string()),
        any::<f64>().prop_map(|x| format!("{x}")),
        (0u64..20).prop_map(|x| x.to_string()),
        "[a-z_]{0,8}".prop_map(|s| format!("{s:?}")),
    ];
    leaf.prop_recursive(3, 24, 6, |inner| {
        let key = prop_oneof![
            Just("variant"), Just("dims"), Just("dim"), Just("W"), Just("G"), Just("mean"), Just("cov"), Just("seed"),
            Just("steps"), Just("methods"), Just("particles"), Just("selection"), Just("model"), Just("levels"),
        ];
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(|v| format!("[{}]", v.join(","))),
            prop::collection::vec((key, inner), 0..5).prop_map(|kv| {
                let body: Vec<String> = kv.into_iter().map(|(k, v)| format!("{k:?}:{v}")).collect();
                format!("{{{}}}", body.join(","))
            }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        all_parsers(&String::from_utf8_lossy(&bytes));
    }

    #[test]
    fn structured_json_never_panics(text in json_fragment()) {
        all_parsers(&text);
    }

    #[test]
    fn truncated_seeds_never_panic(cut in 0usize..400, which in 0usize..17) {
        let mut seeds = corpus("config");
        seeds.extend(corpus("model_json"));
        seeds.extend(corpus("slice_json"));
        seeds.extend(corpus("checkpoint_json"));
        let s = &seeds[which % seeds.len()];
        let end = cut.min(s.len());
        all_parsers(&s[..end]);
    }
}
