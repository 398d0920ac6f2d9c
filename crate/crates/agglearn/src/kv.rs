//! Flat `key=value` text files.
//!
//! This is the shared format for report metadata sidecars, CLI config files,
//! and the resolved-config echo written into run directories. One pair per
//! line, `#` starts a comment line, blank lines are skipped, keys and values
//! are trimmed. When a key repeats, the last occurrence wins.

use std::io::Write;

use crate::error::{Error, Result};

/// Parses `key=value` lines in file order. Duplicate keys are preserved here;
/// callers that want last-wins semantics fold the pairs into a map.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    Ok(parse_kv_numbered(text)?
        .into_iter()
        .map(|(_, key, value)| (key, value))
        .collect())
}

/// Like [`parse_kv`] but keeps the 1-based line number of each pair so that
/// structured parsers built on top can report precise locations.
pub fn parse_kv_numbered(text: &str) -> Result<Vec<(u64, String, String)>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: idx as u64 + 1,
                message: format!("expected key=value, got {line:?}"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: idx as u64 + 1,
                message: "empty key".to_string(),
            });
        }
        pairs.push((idx as u64 + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

pub fn write_kv<W: Write>(mut writer: W, pairs: &[(String, String)]) -> Result<()> {
    for (key, value) in pairs {
        writeln!(writer, "{key}={value}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_skips_noise() {
        let text = "# comment\n\nalpha=1\n beta = two words \n";
        let pairs = parse_kv(text).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("alpha".to_string(), "1".to_string()),
                ("beta".to_string(), "two words".to_string()),
            ]
        );
    }

    #[test]
    fn rejects_lines_without_equals() {
        let err = parse_kv("just a line").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn round_trips() {
        let pairs = vec![
            ("sigma".to_string(), "16.280004210266753".to_string()),
            ("threshold".to_string(), "10".to_string()),
        ];
        let mut buf = Vec::new();
        write_kv(&mut buf, &pairs).unwrap();
        let back = parse_kv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, pairs);
    }
}
