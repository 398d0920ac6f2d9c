//! Prediction CSVs: accepted files hold probabilities in [0, 1] and must
//! round trip bitwise through the writer.

#![no_main]

use libfuzzer_sys::fuzz_target;

use agglearn::evaluation::{parse_predictions, write_predictions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(preds) = parse_predictions(text) else {
        return;
    };
    assert!(preds.iter().all(|p| (0.0..=1.0).contains(p)));
    let mut out = Vec::new();
    write_predictions(&mut out, &preds).expect("writing parsed predictions");
    let back = parse_predictions(std::str::from_utf8(&out).expect("utf-8 predictions"))
        .expect("reparsing written predictions");
    assert_eq!(back, preds, "prediction round trip changed the values");
});
