use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// One compact JSON object per line, each terminated by `\n`.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("in-memory serialization");
        out.push(b'\n');
    }
    out
}

/// Parses line-delimited JSON; blank lines are skipped. `name` labels errors.
pub fn from_jsonl<T: DeserializeOwned>(bytes: &[u8], name: &str) -> Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(name, format!("not UTF-8: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(name, format!("line {}: {e}", i + 1))))
        .collect()
}
