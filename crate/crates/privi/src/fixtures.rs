//! Synthetic fixture corpus with known ground truth: short raw-frame videos
//! with planted shot cuts, each labeled relevant or irrelevant, plus a
//! matching pipeline config.

use std::path::{Path, PathBuf};

use privi_core::curation::{Frame, Snippet};
use privi_core::RngSeed;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{write_frame_dir, VideoMeta};
use crate::labels::{append_label, LabelRecord, Verdict};
use crate::workspace::Workspace;

pub const RELEVANT: &str = "relevant";
pub const IRRELEVANT: &str = "irrelevant";
pub const TRUTH_FILE: &str = "truth.json";
pub const CONFIG_FILE: &str = "config.json";

/// Shot colors; consecutive shots always differ strongly in saturation and value.
const DARK: [u8; 3] = [30, 50, 110];
const BRIGHT: [[u8; 3]; 3] = [[230, 120, 40], [60, 200, 90], [70, 110, 235]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub videos: usize,
    pub seed: u64,
    pub relevant_fraction: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    /// Inclusive frame-count range.
    pub min_frames: usize,
    pub max_frames: usize,
    pub max_cuts: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            videos: 200,
            seed: 7,
            relevant_fraction: 0.6,
            fps: 4.0,
            width: 16,
            height: 12,
            min_frames: 40,
            max_frames: 48,
            max_cuts: 2,
        }
    }
}

/// Ground truth of one fixture video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureVideo {
    pub video_ref: String,
    pub source_id: String,
    pub label: String,
    pub fps: f64,
    pub frame_count: usize,
    /// First frame of every shot after the first.
    pub cut_frames: Vec<u64>,
}

impl FixtureVideo {
    pub fn relevant(&self) -> bool {
        self.label == RELEVANT
    }

    pub fn cut_times(&self) -> Vec<f64> {
        self.cut_frames.iter().map(|&c| c as f64 / self.fps).collect()
    }
}

/// `(id, setting, species, diversity, target proportion, stride)`.
pub const FIXTURE_SOURCES: &[(&str, &str, &str, &str, f64, f64)] = &[
    ("wild_cams", "wild", "chimpanzee", "high", 0.5, 2.0),
    ("sanctuary", "semi_free", "gorilla", "high", 0.3, 2.0),
    ("zoo_clips", "captive", "macaque", "low", 0.2, 3.0),
];

fn frames(v: &FixtureVideo, spec: &FixtureSpec, seed: u64) -> Vec<Frame> {
    let mut rng = RngSeed::new(seed, privi_core::rng::stable_hash(v.video_ref.as_bytes())).rng();
    let first_bright = rng.below(2) == 1;
    let palette = BRIGHT[rng.below(BRIGHT.len())];
    let (w, h) = (spec.width, spec.height);
    (0..v.frame_count)
        .map(|i| {
            let shot = v.cut_frames.iter().filter(|&&c| c as usize <= i).count();
            let color = if (shot % 2 == 0) == first_bright { palette } else { DARK };
            let mut rgb = Vec::with_capacity((w * h * 3) as usize);
            for _ in 0..w * h {
                for c in color {
                    rgb.push((c as i32 + rng.below(5) as i32 - 2).clamp(0, 255) as u8);
                }
            }
            Frame { width: w, height: h, rgb }
        })
        .collect()
}

/// Draws the corpus ground truth without touching the disk.
pub fn plan(spec: &FixtureSpec) -> Vec<FixtureVideo> {
    let mut rng = RngSeed::new(spec.seed, 0xF1C5).rng();
    let total: f64 = FIXTURE_SOURCES.iter().map(|s| s.4).sum();
    (0..spec.videos)
        .map(|i| {
            let u = rng.uniform() * total;
            let mut acc = 0.0;
            let mut source = FIXTURE_SOURCES[FIXTURE_SOURCES.len() - 1].0;
            for s in FIXTURE_SOURCES {
                acc += s.4;
                if u < acc {
                    source = s.0;
                    break;
                }
            }
            let frame_count = spec.min_frames + rng.below(spec.max_frames - spec.min_frames + 1);
            let n_cuts = rng.below(spec.max_cuts + 1);
            let mut cut_frames: Vec<u64> = Vec::new();
            let margin = (2.0 * spec.fps) as usize;
            while cut_frames.len() < n_cuts {
                let c = (margin + rng.below(frame_count - 2 * margin)) as u64;
                if cut_frames.iter().all(|&o| o.abs_diff(c) as usize >= margin) {
                    cut_frames.push(c);
                }
            }
            cut_frames.sort_unstable();
            let label = if rng.uniform() < spec.relevant_fraction { RELEVANT } else { IRRELEVANT };
            FixtureVideo {
                video_ref: format!("v{i:03}"),
                source_id: source.into(),
                label: label.into(),
                fps: spec.fps,
                frame_count,
                cut_frames,
            }
        })
        .collect()
}

/// Pipeline config for a corpus under `videos_root`: synthetic embedder with
/// relevant/irrelevant clusters 8 noise deviations apart, and a stub detector
/// that finds a generic primate box in every keyframe.
pub fn fixture_config(videos_root: &Path, seed: u64) -> serde_json::Value {
    let sources: Vec<serde_json::Value> = FIXTURE_SOURCES
        .iter()
        .map(|(id, setting, species, diversity, p, stride)| {
            serde_json::json!({"id": id, "setting": setting, "species": [species], "diversity": diversity,
                               "target_proportion": p, "chunk_stride_s": stride})
        })
        .collect();
    serde_json::json!({
        "sources": sources,
        "videos": {"kind": "directory", "root": videos_root},
        "seed": seed,
        "embedder": {"kind": "synthetic", "dim": 16, "noise_std": 1.0, "separation": 8.0, "labels": [RELEVANT, IRRELEVANT]},
        "relevance": {"hidden_dim": 32, "dropout": 0.1, "epochs": 100, "batch_size": 32, "base_lr": 0.01,
                      "val_fraction": 0.5, "min_precision": 0.9, "seed": 0},
        "detector": {"kind": "synthetic",
                     "by_label": {
                         RELEVANT: [{"x1": 0.2, "y1": 0.2, "x2": 0.7, "y2": 0.8, "score": 0.92, "label": "primate"},
                                    {"x1": 0.22, "y1": 0.2, "x2": 0.7, "y2": 0.82, "score": 0.6, "label": "primate"}],
                         IRRELEVANT: [{"x1": 0.4, "y1": 0.3, "x2": 0.6, "y2": 0.5, "score": 0.5, "label": "primate"}]
                     }}
    })
}

/// Writes `videos/`, `truth.json` and `config.json` under `dir`.
pub fn write_corpus(dir: &Path, spec: &FixtureSpec) -> Result<Vec<FixtureVideo>> {
    let truth = plan(spec);
    let root = dir.join("videos");
    for v in &truth {
        let meta = VideoMeta {
            source_id: v.source_id.clone(),
            fps: v.fps,
            frame_count: v.frame_count,
            width: spec.width,
            height: spec.height,
            label: Some(v.label.clone()),
        };
        write_frame_dir(&root.join(&v.video_ref), &meta, frames(v, spec, spec.seed))?;
    }
    let write = |name: &str, bytes: Vec<u8>| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write(TRUTH_FILE, serde_json::to_vec_pretty(&truth).expect("in-memory serialization"))?;
    write(CONFIG_FILE, serde_json::to_vec_pretty(&fixture_config(Path::new("videos"), spec.seed)).expect("in-memory serialization"))?;
    Ok(truth)
}

pub fn read_truth(dir: &Path) -> Result<Vec<FixtureVideo>> {
    let p: PathBuf = dir.join(TRUTH_FILE);
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(p.display().to_string(), e.to_string()))
}

/// Ground-truth label records for up to `n` snippets, picked by a seeded shuffle.
pub fn truth_labels(snippets: &[Snippet], truth: &[FixtureVideo], n: usize, seed: u64, annotator: &str) -> Vec<LabelRecord> {
    let mut order: Vec<usize> = (0..snippets.len()).collect();
    RngSeed::new(seed, 0x1AB).rng().shuffle(&mut order);
    order
        .into_iter()
        .take(n)
        .filter_map(|i| {
            let s = &snippets[i];
            let v = truth.iter().find(|v| v.video_ref == s.video_ref)?;
            Some(LabelRecord {
                keyframe_ref: s.snippet_id.clone(),
                verdict: if v.relevant() { Verdict::Relevant } else { Verdict::Irrelevant },
                annotator: annotator.into(),
                timestamp: format!("2024-01-01T00:00:{:02}Z", i % 60),
                criteria: [("primate_prominent".to_string(), v.relevant()), ("real_world".to_string(), true)].into(),
            })
        })
        .collect()
}

/// Appends ground-truth labels for `n` snippets to the workspace log.
pub fn label_from_truth(ws: &Workspace, snippets: &[Snippet], truth: &[FixtureVideo], n: usize, seed: u64) -> Result<usize> {
    let records = truth_labels(snippets, truth, n, seed, "fixture");
    for r in &records {
        append_label(ws, r)?;
    }
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use privi_core::curation::{detect_cuts, FrameSource};

    #[test]
    fn plan_is_deterministic_with_separated_cuts() {
        let spec = FixtureSpec::default();
        let a = plan(&spec);
        assert_eq!(a, plan(&spec));
        assert_eq!(a.len(), 200);
        assert!(a.iter().any(|v| v.relevant()) && a.iter().any(|v| !v.relevant()));
        for v in &a {
            assert!(v.cut_frames.windows(2).all(|w| w[1] - w[0] >= 8));
            assert!(v.cut_frames.iter().all(|&c| c >= 8 && (c as usize) < v.frame_count - 8 + 1));
        }
    }

    #[test]
    fn planted_cuts_are_detected_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec { videos: 12, ..FixtureSpec::default() };
        let truth = write_corpus(dir.path(), &spec).unwrap();
        for v in &truth {
            let src = crate::frames::DirFrameSource::open(dir.path().join("videos").join(&v.video_ref)).unwrap();
            assert_eq!(src.frame_count(), v.frame_count);
            let det = detect_cuts(&src, &v.video_ref, 27.0).unwrap();
            assert_eq!(det.cuts.cuts, v.cut_frames, "{}", v.video_ref);
        }
        assert_eq!(read_truth(dir.path()).unwrap(), truth);
        crate::config::PipelineConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
    }
}
