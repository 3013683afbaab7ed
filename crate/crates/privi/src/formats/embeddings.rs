use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"PVEM";
pub const EMBEDDING_VERSION: u32 = 1;

/// Row-major `f32` embeddings plus the snippet-id → row index kept in a
/// JSON sidecar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
    pub index: BTreeMap<String, u64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new(), index: BTreeMap::new() }
    }

    pub fn push(&mut self, snippet_id: &str, row: Vec<f32>) -> Result<u64> {
        if row.len() != self.dim {
            return Err(privi_core::Error::Contract(format!("embedding of dim {} in a dim-{} store", row.len(), self.dim)).into());
        }
        if self.index.contains_key(snippet_id) {
            return Err(privi_core::Error::Contract(format!("duplicate embedding for {snippet_id}")).into());
        }
        let r = self.rows.len() as u64;
        self.rows.push(row);
        self.index.insert(snippet_id.to_string(), r);
        Ok(r)
    }

    pub fn get(&self, snippet_id: &str) -> Option<&[f32]> {
        self.index.get(snippet_id).map(|&r| self.rows[r as usize].as_slice())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Header `PVEM`, version, dim, count (little-endian), then the rows.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.dim * self.rows.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for row in &self.rows {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn encode_index(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.index).expect("in-memory serialization");
        out.push(b'\n');
        out
    }

    pub fn decode(data: &[u8], index: &[u8], name: &str) -> Result<Self> {
        let bad = |m: &str| Error::format(name, m.to_string());
        if data.len() < 20 || &data[..4] != EMBEDDING_MAGIC {
            return Err(bad("not an embedding store (bad magic)"));
        }
        let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
        if version != EMBEDDING_VERSION {
            return Err(bad(&format!("unsupported embedding store version {version}")));
        }
        let dim = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(data[12..20].try_into().unwrap()) as usize;
        let body = &data[20..];
        if count.checked_mul(dim).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
            return Err(bad(&format!("body has {} bytes, header promises {count}×{dim} floats", body.len())));
        }
        let rows: Vec<Vec<f32>> = if dim == 0 {
            if count > 0 {
                return Err(bad("rows of width 0"));
            }
            Vec::new()
        } else {
            body.chunks_exact(dim * 4)
                .map(|r| r.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
                .collect()
        };
        let index: BTreeMap<String, u64> =
            serde_json::from_slice(index).map_err(|e| Error::format(name, format!("sidecar index: {e}")))?;
        if index.values().any(|&r| r as usize >= count) {
            return Err(bad("sidecar index points past the last row"));
        }
        Ok(Self { dim, rows, index })
    }
}
