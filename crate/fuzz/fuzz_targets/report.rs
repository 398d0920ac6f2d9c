//! Aggregation report decoding: a metadata sidecar and a table CSV separated
//! by the first NUL byte. Accepted pairs must round trip through the report
//! writers with support, metrics, and flags intact.

#![no_main]

use libfuzzer_sys::fuzz_target;

use agglearn::aggregation::{parse_report_csv, parse_report_meta};

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (meta_bytes, rest) = data.split_at(split);
    let csv_bytes = rest.get(1..).unwrap_or(&[]);

    let (Ok(meta_text), Ok(csv_text)) = (
        std::str::from_utf8(meta_bytes),
        std::str::from_utf8(csv_bytes),
    ) else {
        return;
    };
    let Ok(meta) = parse_report_meta(meta_text) else {
        return;
    };
    let Ok(report) = parse_report_csv(csv_text, &meta) else {
        return;
    };

    let mut meta_out = Vec::new();
    let mut csv_out = Vec::new();
    report.write_meta(&mut meta_out).expect("writing meta");
    report.write_csv(&mut csv_out).expect("writing csv");
    let meta2 = parse_report_meta(std::str::from_utf8(&meta_out).expect("utf-8 meta"))
        .expect("reparsing written meta");
    let report2 = parse_report_csv(std::str::from_utf8(&csv_out).expect("utf-8 csv"), &meta2)
        .expect("reparsing written csv");

    assert_eq!(report2.support(), report.support());
    assert_eq!(report2.sigma(), report.sigma());
    assert_eq!(report2.thresholded(), report.thresholded());
    assert_eq!(report2.reparameterized(), report.reparameterized());
    let (d1, c1, s1) = report.metrics();
    let (d2, c2, s2) = report2.metrics();
    assert_eq!(d1, d2, "display counts changed in round trip");
    assert_eq!(c1, c2, "click counts changed in round trip");
    assert_eq!(s1, s2, "sale counts changed in round trip");
});
