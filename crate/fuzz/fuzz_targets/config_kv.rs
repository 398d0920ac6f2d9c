//! The kv format backs config files and report metadata sidecars. Anything
//! that parses must survive a write-and-reparse cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

use agglearn::kv::{parse_kv, parse_kv_numbered, write_kv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let numbered = parse_kv_numbered(text);
    let plain = parse_kv(text);
    match (numbered, plain) {
        (Ok(numbered), Ok(plain)) => {
            let stripped: Vec<(String, String)> =
                numbered.into_iter().map(|(_, k, v)| (k, v)).collect();
            assert_eq!(stripped, plain, "numbered and plain parses disagree");

            let mut out = Vec::new();
            write_kv(&mut out, &plain).expect("writing parsed pairs");
            let text2 = std::str::from_utf8(&out).expect("writer emits utf-8");
            let reparsed = parse_kv(text2).expect("reparsing written pairs");
            assert_eq!(reparsed, plain, "kv round trip changed the pairs");
        }
        (Err(_), Err(_)) => {}
        (a, b) => panic!("numbered and plain parse disagree on success: {a:?} vs {b:?}"),
    }
});
