//! Enriched model files, which carry a CTR table, standardization stats, and
//! coefficients. Accepted inputs must round trip to an equal model.

#![no_main]

use libfuzzer_sys::fuzz_target;

use agglearn::enrichment::{parse_enriched_model, write_enriched_model};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = parse_enriched_model(text) else {
        return;
    };
    let mut out = Vec::new();
    write_enriched_model(&mut out, &model, &[]).expect("writing parsed model");
    let back = parse_enriched_model(std::str::from_utf8(&out).expect("utf-8 model"))
        .expect("reparsing written model");
    assert_eq!(back, model, "enriched model round trip changed the model");
});
