//! Schema vocabulary files: any accepted input must round trip through the
//! writer with every feature name, order, and modality value intact.

#![no_main]

use libfuzzer_sys::fuzz_target;

use agglearn::data::Schema;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(schema) = Schema::parse_vocab(text) else {
        return;
    };
    let mut out = Vec::new();
    schema.write_vocab(&mut out).expect("writing parsed schema");
    let text2 = std::str::from_utf8(&out).expect("writer emits utf-8");
    let back = Schema::parse_vocab(text2).expect("reparsing written schema");

    assert_eq!(back.num_features(), schema.num_features());
    for i in 0..schema.num_features() {
        let (a, b) = (schema.feature(i), back.feature(i));
        assert_eq!(a.name(), b.name(), "feature {i} name changed");
        assert_eq!(a.cardinality(), b.cardinality(), "feature {i} size changed");
        for m in 0..a.cardinality() as u32 {
            assert_eq!(a.value(m), b.value(m), "feature {i} modality {m} changed");
        }
    }
});
