//! Granular event CSVs under the first-seen interning reader. A file the
//! reader accepts must export and re-read to the identical dataset.

#![no_main]

use std::io::Cursor;

use libfuzzer_sys::fuzz_target;

use agglearn::data::{read_granular_csv, write_granular_csv, ColumnMap, LabelKind};

fuzz_target!(|data: &[u8]| {
    for f in [1usize, 2, 4] {
        let columns = ColumnMap::standard(f);
        let Ok((dataset, schema)) = read_granular_csv(Cursor::new(data), &columns) else {
            continue;
        };
        let mut out = Vec::new();
        write_granular_csv(&mut out, &dataset, &schema).expect("exporting parsed dataset");
        let (back, schema2) =
            read_granular_csv(Cursor::new(&out[..]), &columns).expect("re-reading export");

        assert_eq!(back.num_rows(), dataset.num_rows());
        assert_eq!(schema2.cardinalities(), schema.cardinalities());
        assert_eq!(
            back.labels(LabelKind::Click),
            dataset.labels(LabelKind::Click)
        );
        assert_eq!(
            back.labels(LabelKind::Sale),
            dataset.labels(LabelKind::Sale)
        );
        for r in 0..dataset.num_rows() {
            assert_eq!(back.features_of(r), dataset.features_of(r), "row {r} moved");
        }
    }
});
