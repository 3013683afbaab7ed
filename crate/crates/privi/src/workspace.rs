//! Content-addressed workspace: immutable objects named by their SHA-256,
//! one ref per stage pointing at the stage's latest record, an append-only
//! run log, the label log and small mutable state.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::from_jsonl;

pub const WORKSPACE_ENV: &str = "PRIVI_WORKSPACE";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What a stage produced from which inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
    pub output_hashes: BTreeMap<String, String>,
    pub duration_ms: u64,
    /// The stage was already up to date and nothing was recomputed.
    pub reused: bool,
}

/// Mutable settings changed from the console.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceState {
    /// Relevance threshold overriding the auto-selected one.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

fn write_durably(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn append_line(path: &Path, line: &[u8]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(line).and_then(|_| f.sync_data()).map_err(|e| Error::io(path, e))
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>> {
    match std::fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

impl Workspace {
    /// Opens `root`, creating the layout if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["objects", "refs"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn object_path(&self, hash: &str) -> PathBuf {
        self.root.join("objects").join(hash)
    }

    /// Stores bytes under their hash and returns the hash.
    pub fn put(&self, bytes: &[u8]) -> Result<String> {
        let hash = sha256_hex(bytes);
        let path = self.object_path(&hash);
        if !path.exists() {
            write_durably(&path, bytes)?;
        }
        Ok(hash)
    }

    pub fn get(&self, hash: &str) -> Result<Vec<u8>> {
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::format(hash, "not an object hash"));
        }
        let path = self.object_path(hash);
        read_optional(&path)?.ok_or_else(|| Error::MissingArtifact(format!("object {hash}")))
    }

    pub fn has(&self, hash: &str) -> bool {
        self.object_path(hash).exists()
    }

    pub fn stage_record(&self, stage: &str) -> Result<Option<StageRecord>> {
        let path = self.root.join("refs").join(stage);
        let Some(hash) = read_optional(&path)? else { return Ok(None) };
        let hash = String::from_utf8_lossy(&hash).trim().to_string();
        let bytes = self.get(&hash)?;
        serde_json::from_slice(&bytes).map(Some).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
    }

    /// Output `name` of the latest run of `stage`.
    pub fn stage_output(&self, stage: &str, name: &str) -> Result<Vec<u8>> {
        let rec = self
            .stage_record(stage)?
            .ok_or_else(|| Error::MissingArtifact(format!("{stage} output '{name}' (run `{stage}` first)")))?;
        let hash = rec
            .outputs
            .get(name)
            .ok_or_else(|| Error::MissingArtifact(format!("{stage} output '{name}'")))?;
        self.get(hash)
    }

    pub fn set_stage_record(&self, record: &StageRecord) -> Result<String> {
        let hash = self.put(&serde_json::to_vec(record).expect("in-memory serialization"))?;
        write_durably(&self.root.join("refs").join(&record.stage), format!("{hash}\n").as_bytes())?;
        Ok(hash)
    }

    pub fn append_run(&self, run: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_vec(run).expect("in-memory serialization");
        line.push(b'\n');
        append_line(&self.root.join("runs.jsonl"), &line)
    }

    pub fn runs(&self) -> Result<Vec<RunRecord>> {
        match read_optional(&self.root.join("runs.jsonl"))? {
            Some(b) => from_jsonl(&b, "runs.jsonl"),
            None => Ok(Vec::new()),
        }
    }

    pub fn state(&self) -> Result<WorkspaceState> {
        let path = self.root.join("state.json");
        match read_optional(&path)? {
            Some(b) => serde_json::from_slice(&b).map_err(|e| Error::format(path.display().to_string(), e.to_string())),
            None => Ok(WorkspaceState::default()),
        }
    }

    /// Replaces the state file atomically and syncs it before returning.
    pub fn set_state(&self, state: &WorkspaceState) -> Result<()> {
        write_durably(&self.root.join("state.json"), &serde_json::to_vec_pretty(state).expect("in-memory serialization"))
    }

    pub fn labels_path(&self) -> PathBuf {
        self.root.join("labels.jsonl")
    }

    pub(crate) fn append_label_line(&self, line: &[u8]) -> Result<()> {
        append_line(&self.labels_path(), line)
    }

    pub(crate) fn read_labels_raw(&self) -> Result<Vec<u8>> {
        Ok(read_optional(&self.labels_path())?.unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objects_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        let h = ws.put(b"hello").unwrap();
        assert_eq!(h, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        assert_eq!(ws.put(b"hello").unwrap(), h);
        assert_eq!(ws.get(&h).unwrap(), b"hello");
        assert!(matches!(ws.get(&"0".repeat(64)), Err(Error::MissingArtifact(_))));
        assert!(ws.get("../etc/passwd").is_err());
    }

    #[test]
    fn refs_and_runs() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert!(ws.stage_record("chunk").unwrap().is_none());
        assert!(matches!(ws.stage_output("chunk", "manifest"), Err(Error::MissingArtifact(m)) if m.contains("chunk")));
        let out = ws.put(b"m").unwrap();
        let rec = StageRecord {
            stage: "chunk".into(),
            config_hash: "c".into(),
            inputs: BTreeMap::new(),
            outputs: [("manifest".to_string(), out)].into(),
        };
        ws.set_stage_record(&rec).unwrap();
        assert_eq!(ws.stage_record("chunk").unwrap().unwrap(), rec);
        assert_eq!(ws.stage_output("chunk", "manifest").unwrap(), b"m");
        let run = RunRecord {
            stage: "chunk".into(),
            config_hash: "c".into(),
            input_hashes: BTreeMap::new(),
            output_hashes: rec.outputs.clone(),
            duration_ms: 3,
            reused: false,
        };
        ws.append_run(&run).unwrap();
        ws.append_run(&run).unwrap();
        assert_eq!(ws.runs().unwrap().len(), 2);
    }

    #[test]
    fn state_persists() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert_eq!(ws.state().unwrap().threshold, None);
        ws.set_state(&WorkspaceState { threshold: Some(0.7) }).unwrap();
        let again = Workspace::open(dir.path()).unwrap();
        assert_eq!(again.state().unwrap().threshold, Some(0.7));
    }
}
