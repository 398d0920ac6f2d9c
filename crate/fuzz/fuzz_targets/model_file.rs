//! The kind-dispatching model loader. Whatever variant it accepts must
//! round trip through the matching writer and parse back to the same kind.

#![no_main]

use libfuzzer_sys::fuzz_target;

use agglearn::agg_logistic::write_model;
use agglearn::enrichment::{parse_model_file, write_enriched_model, ModelFile};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(parsed) = parse_model_file(text) else {
        return;
    };
    let mut out = Vec::new();
    match &parsed {
        ModelFile::Linear(model) => {
            write_model(&mut out, model, &[]).expect("writing linear model");
            match parse_model_file(std::str::from_utf8(&out).expect("utf-8")) {
                Ok(ModelFile::Linear(back)) => assert_eq!(&back, model),
                other => panic!("linear model reparsed as {other:?}"),
            }
        }
        ModelFile::Enriched(model) => {
            write_enriched_model(&mut out, model, &[]).expect("writing enriched model");
            match parse_model_file(std::str::from_utf8(&out).expect("utf-8")) {
                Ok(ModelFile::Enriched(back)) => assert_eq!(&back, model),
                other => panic!("enriched model reparsed as {other:?}"),
            }
        }
    }
});
