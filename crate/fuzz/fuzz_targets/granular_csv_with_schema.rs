//! Prediction-time CSV ingestion against a fixed vocabulary. The input is a
//! vocabulary file and a data file separated by the first NUL byte. Unknown
//! values must land on the out-of-vocabulary index, never out of range.

#![no_main]

use std::io::Cursor;

use libfuzzer_sys::fuzz_target;

use agglearn::data::{read_granular_csv_with_schema, ColumnMap, Schema, OOV_INDEX};

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (vocab_bytes, rest) = data.split_at(split);
    let csv_bytes = rest.get(1..).unwrap_or(&[]);

    let Ok(vocab_text) = std::str::from_utf8(vocab_bytes) else {
        return;
    };
    let Ok(schema) = Schema::parse_vocab(vocab_text) else {
        return;
    };
    let columns = ColumnMap::standard(schema.num_features());
    let Ok(dataset) = read_granular_csv_with_schema(Cursor::new(csv_bytes), &columns, &schema)
    else {
        return;
    };
    for r in 0..dataset.num_rows() {
        for (i, &m) in dataset.features_of(r).iter().enumerate() {
            assert!(
                m == OOV_INDEX || (m as usize) < schema.feature(i).cardinality(),
                "row {r} feature {i} interned outside the vocabulary"
            );
        }
    }
});
