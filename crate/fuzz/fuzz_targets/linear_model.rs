//! Linear model files: anything the parser accepts must survive the writer
//! and compare equal, weights bitwise included.

#![no_main]

use libfuzzer_sys::fuzz_target;

use agglearn::agg_logistic::{parse_model, write_model};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = parse_model(text) else {
        return;
    };
    let mut out = Vec::new();
    write_model(&mut out, &model, &[]).expect("writing parsed model");
    let back = parse_model(std::str::from_utf8(&out).expect("utf-8 model"))
        .expect("reparsing written model");
    assert_eq!(back, model, "model round trip changed the model");
});
