//! Manifest assembly and the dataset composition report.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::types::{validate_sources, Setting, Snippet, SourceDataset};
use crate::error::{Error, Result};

/// Label used for kept snippets without an assigned species.
pub const UNLABELED: &str = "unlabeled";

/// Ordered snippet records plus the metadata of their sources.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sources: Vec<SourceDataset>,
    pub snippets: Vec<Snippet>,
}

impl Manifest {
    pub fn kept(&self) -> impl Iterator<Item = &Snippet> {
        self.snippets.iter().filter(|s| s.kept)
    }
}

/// One column of the composition table (a source, or the whole dataset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionColumn {
    pub name: String,
    pub unique_hours: f64,
    pub snippets: u64,
    /// Percent of this column's kept snippets per species.
    pub species_pct: BTreeMap<String, f64>,
    /// Percent of this column's kept snippets per recording setting.
    pub setting_pct: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    /// One column per source in manifest order, then the total.
    pub columns: Vec<CompositionColumn>,
    /// Share of all kept snippets per source, in percent.
    pub source_pct: BTreeMap<String, f64>,
    pub discarded: BTreeMap<String, u64>,
}

impl CompositionReport {
    pub fn total(&self) -> &CompositionColumn {
        self.columns.last().expect("report always has a total column")
    }
}

/// Length of the union of `[start, end)` intervals.
fn union_length(mut intervals: Vec<(f64, f64)>) -> f64 {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (s, e) in intervals {
        cur = match cur {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

fn column<'a>(name: &str, kept: impl Iterator<Item = &'a Snippet> + Clone, settings: &BTreeMap<&str, Setting>) -> CompositionColumn {
    let mut per_video: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut species: BTreeMap<String, u64> = BTreeMap::new();
    let mut setting: BTreeMap<String, u64> = BTreeMap::new();
    let mut n = 0u64;
    for s in kept {
        n += 1;
        per_video.entry(&s.video_ref).or_default().push((s.start_s, s.end_s));
        *species.entry(s.species.clone().unwrap_or_else(|| UNLABELED.into())).or_default() += 1;
        if let Some(st) = settings.get(s.source_id.as_str()) {
            *setting.entry(st.to_string()).or_default() += 1;
        }
    }
    let seconds: f64 = per_video.into_values().map(union_length).sum();
    let pct = |m: BTreeMap<String, u64>| m.into_iter().map(|(k, c)| (k, 100.0 * c as f64 / n as f64)).collect();
    CompositionColumn { name: name.into(), unique_hours: seconds / 3600.0, snippets: n, species_pct: pct(species), setting_pct: pct(setting) }
}

/// Validates finalized snippets and summarizes the kept ones. Snippets keep
/// their input order.
pub fn build_manifest(snippets: Vec<Snippet>, sources: Vec<SourceDataset>) -> Result<(Manifest, CompositionReport)> {
    validate_sources(&sources)?;
    let mut ids = BTreeSet::new();
    for s in &snippets {
        if !ids.insert(s.snippet_id.as_str()) {
            return Err(Error::InvalidInput(alloc::format!("duplicate snippet_id '{}'", s.snippet_id)));
        }
        s.validate()?;
        if !sources.iter().any(|src| src.id == s.source_id) {
            return Err(Error::InvalidInput(alloc::format!("snippet '{}' names unknown source '{}'", s.snippet_id, s.source_id)));
        }
    }
    let settings: BTreeMap<&str, Setting> = sources.iter().map(|s| (s.id.as_str(), s.setting)).collect();
    let kept = snippets.iter().filter(|s| s.kept);
    let mut columns: Vec<CompositionColumn> =
        sources.iter().map(|src| column(&src.id, kept.clone().filter(|s| s.source_id == src.id), &settings)).collect();
    let total = column("total", kept, &settings);
    let source_pct = columns
        .iter()
        .map(|c| (c.name.clone(), if total.snippets == 0 { 0.0 } else { 100.0 * c.snippets as f64 / total.snippets as f64 }))
        .collect();
    columns.push(total);
    let mut discarded = BTreeMap::new();
    for s in snippets.iter().filter_map(|s| s.discard_reason) {
        *discarded.entry(s.to_string()).or_default() += 1;
    }
    Ok((Manifest { sources, snippets }, CompositionReport { columns, source_pct, discarded }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::types::{DiscardReason, Diversity};

    fn source(id: &str, setting: Setting) -> SourceDataset {
        SourceDataset { id: id.into(), setting, species: alloc::vec![], diversity: Diversity::Low, target_proportion: 0.5, chunk_stride_s: 2.0 }
    }

    fn snip(src: &str, video: &str, start: f64, species: Option<&str>) -> Snippet {
        let mut s = Snippet::new(src, video, start, start + 3.0);
        s.species = species.map(Into::into);
        s
    }

    #[test]
    fn empty_input_gives_zero_hours() {
        let (m, r) = build_manifest(alloc::vec![], alloc::vec![]).unwrap();
        assert!(m.snippets.is_empty());
        assert_eq!(r.total().unique_hours, 0.0);
        assert_eq!(r.total().snippets, 0);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let s = alloc::vec![snip("a", "v", 0.0, None), snip("a", "v", 0.0, None)];
        assert!(matches!(build_manifest(s, alloc::vec![source("a", Setting::Wild)]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ten_snippets_two_sources_hand_tally() {
        let mut s = Vec::new();
        // source a: 6 snippets on one video, stride 2 → union [0, 13) s
        for i in 0..6 {
            s.push(snip("a", "va", 2.0 * i as f64, Some(if i < 4 { "chimpanzee" } else { "baboon" })));
        }
        // source b: 4 snippets on two videos, one discarded
        s.push(snip("b", "vb1", 0.0, Some("macaque")));
        s.push(snip("b", "vb1", 3.0, Some("macaque")));
        s.push(snip("b", "vb2", 0.0, None));
        let mut d = snip("b", "vb2", 10.0, Some("macaque"));
        d.discard(DiscardReason::Irrelevant);
        s.push(d);
        let (_, r) = build_manifest(s, alloc::vec![source("a", Setting::Wild), source("b", Setting::Captive)]).unwrap();
        let t = r.total();
        assert_eq!(t.snippets, 9);
        assert!((t.unique_hours * 3600.0 - (13.0 + 6.0 + 3.0)).abs() < 1e-9);
        assert!((t.species_pct["chimpanzee"] - 400.0 / 9.0).abs() < 1e-9);
        assert!((t.species_pct["macaque"] - 200.0 / 9.0).abs() < 1e-9);
        assert!((t.species_pct[UNLABELED] - 100.0 / 9.0).abs() < 1e-9);
        assert!((t.setting_pct["wild"] - 600.0 / 9.0).abs() < 1e-9);
        assert!((r.source_pct["b"] - 300.0 / 9.0).abs() < 1e-9);
        assert_eq!(r.columns[0].species_pct["baboon"], 100.0 / 3.0);
        assert_eq!(r.discarded["irrelevant"], 1);
    }
}
