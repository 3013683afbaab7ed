//! Append-only relevance label log with last-write-wins per annotator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::formats::from_jsonl;
use crate::workspace::Workspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Relevant,
    Irrelevant,
}

impl Verdict {
    pub fn is_relevant(self) -> bool {
        self == Verdict::Relevant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    /// Snippet id whose keyframe was judged.
    pub keyframe_ref: String,
    pub verdict: Verdict,
    pub annotator: String,
    pub timestamp: String,
    /// Advisory inclusion criteria (e.g. `primate_prominent`, `real_world`).
    #[serde(default)]
    pub criteria: BTreeMap<String, bool>,
}

impl LabelRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.keyframe_ref.trim().is_empty() {
            return Err("keyframe_ref is empty".into());
        }
        if self.annotator.trim().is_empty() {
            return Err("annotator is empty".into());
        }
        if self.timestamp.trim().is_empty() {
            return Err("timestamp is empty".into());
        }
        if self.criteria.keys().any(|k| k.trim().is_empty()) {
            return Err("criteria flag with an empty name".into());
        }
        Ok(())
    }
}

/// Appends one record and syncs the log before returning.
pub fn append_label(ws: &Workspace, record: &LabelRecord) -> Result<()> {
    let mut line = serde_json::to_vec(record).expect("in-memory serialization");
    line.push(b'\n');
    ws.append_label_line(&line)
}

pub fn read_labels(ws: &Workspace) -> Result<Vec<LabelRecord>> {
    from_jsonl(&ws.read_labels_raw()?, "labels.jsonl")
}

/// The latest verdict of each annotator for each keyframe.
pub fn current_verdicts(log: &[LabelRecord]) -> BTreeMap<(String, String), (usize, Verdict)> {
    let mut out = BTreeMap::new();
    for (i, r) in log.iter().enumerate() {
        out.insert((r.keyframe_ref.clone(), r.annotator.clone()), (i, r.verdict));
    }
    out
}

/// One training label per keyframe: the majority of the annotators' current
/// verdicts, ties going to the most recent one.
pub fn effective_labels(log: &[LabelRecord]) -> BTreeMap<String, bool> {
    let mut votes: BTreeMap<String, (i64, usize, Verdict)> = BTreeMap::new();
    for ((keyframe, _), (pos, verdict)) in current_verdicts(log) {
        let e = votes.entry(keyframe).or_insert((0, pos, verdict));
        e.0 += if verdict.is_relevant() { 1 } else { -1 };
        if pos >= e.1 {
            e.1 = pos;
            e.2 = verdict;
        }
    }
    votes
        .into_iter()
        .map(|(k, (balance, _, latest))| (k, if balance == 0 { latest.is_relevant() } else { balance > 0 }))
        .collect()
}
