//! Pipeline configuration: sources, inputs, stage parameters, providers and
//! experiments. Loaded from JSON; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use privi_core::classifier::{ClassifierConfig, LossKind, Task};
use privi_core::curation::{validate_sources, DetectionParams, RelevanceConfig, SourceDataset, DEFAULT_CUT_THRESHOLD, SNIPPET_LENGTH_S};
use privi_core::jepa::JepaConfig;
use privi_core::providers::{RelativeBox, TokenLayout};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frames::VideoEntry;
use crate::http::HttpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub sources: Vec<SourceDataset>,
    pub videos: VideoInput,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workspace: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub cuts: CutsConfig,
    #[serde(default)]
    pub chunk: ChunkConfig,
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub relevance: RelevanceConfig,
    pub detector: DetectorConfig,
    #[serde(default)]
    pub detection: DetectionParams,
    #[serde(default)]
    pub subsample: SubsampleConfig,
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default)]
    pub jepa: Option<JepaConfig>,
}

/// Where the videos come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VideoInput {
    /// Every subdirectory of `root` holding a `meta.json` is one video,
    /// named after the subdirectory.
    Directory { root: PathBuf },
    /// Frames requested from a decoder subprocess.
    Decoder { command: Vec<String>, videos: Vec<VideoEntry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutsConfig {
    pub threshold: f64,
}

impl Default for CutsConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_CUT_THRESHOLD }
    }
}

/// Snippet length; the stride is per source (`chunk_stride_s`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkConfig {
    pub length_s: f64,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self { length_s: SNIPPET_LENGTH_S }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsampleConfig {
    /// Total snippet budget; `None` keeps everything that survived filtering.
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    /// Label centroids on orthogonal axes, `separation` noise deviations apart.
    Synthetic {
        dim: usize,
        noise_std: f64,
        separation: f64,
        labels: Vec<String>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorConfig {
    /// Fixed frame-relative boxes, optionally chosen by the video label.
    Synthetic {
        #[serde(default)]
        default: Vec<RelativeBox>,
        #[serde(default)]
        by_label: BTreeMap<String, Vec<RelativeBox>>,
    },
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeaturesConfig {
    /// Tokens are the class mean plus noise.
    Synthetic {
        layout: TokenLayout,
        dim: usize,
        mean_scale: f64,
        noise_std: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Miniclip records, one JSON object per line.
    File { path: PathBuf },
    /// Generated sequences with one class each.
    Synthetic {
        train_sequences: usize,
        #[serde(default)]
        val_sequences: usize,
        test_sequences: usize,
        #[serde(default = "one")]
        clips_per_sequence: usize,
        #[serde(default = "default_clip_frames")]
        clip_frames: u64,
    },
}

fn one() -> usize {
    1
}
fn default_clip_frames() -> u64 {
    64
}

/// Trainable-head hyperparameters; the input width, class count and task
/// come from the features and the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub d_prime: usize,
    pub layers: usize,
    pub heads: usize,
    pub loss: Option<LossKind>,
    pub eql_lambda: f64,
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub final_lr_fraction: f64,
    pub batch_size: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        let c = ClassifierConfig::new(1, 2, Task::SingleLabel);
        Self {
            d_prime: c.d_prime,
            layers: c.layers,
            heads: c.heads,
            loss: None,
            eql_lambda: c.eql_lambda,
            epochs: c.epochs,
            base_lr: c.base_lr,
            warmup_fraction: c.warmup_fraction,
            final_lr_fraction: c.final_lr_fraction,
            batch_size: c.batch_size,
        }
    }
}

impl HeadConfig {
    pub fn classifier(&self, d: usize, classes: usize, task: Task, seed: u64) -> ClassifierConfig {
        let base = ClassifierConfig::new(d, classes, task);
        ClassifierConfig {
            d_prime: self.d_prime,
            layers: self.layers,
            heads: self.heads,
            loss: self.loss.unwrap_or(base.loss),
            eql_lambda: self.eql_lambda,
            epochs: self.epochs,
            base_lr: self.base_lr,
            warmup_fraction: self.warmup_fraction,
            final_lr_fraction: self.final_lr_fraction,
            batch_size: self.batch_size,
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelEfficiencyConfig {
    pub fractions: Vec<f64>,
    pub repeats: usize,
}

impl Default for LabelEfficiencyConfig {
    fn default() -> Self {
        Self { fractions: vec![0.1, 0.25, 0.5], repeats: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub classes: Vec<String>,
    #[serde(default = "single_label")]
    pub task: Task,
    pub dataset: DatasetConfig,
    pub features: FeaturesConfig,
    #[serde(default)]
    pub head: HeadConfig,
    /// Heads trained with independent seeds and averaged at evaluation.
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    /// Evaluate on the three protocol views instead of the plain clip.
    #[serde(default = "yes")]
    pub multi_view: bool,
    #[serde(default)]
    pub label_efficiency: LabelEfficiencyConfig,
}

fn single_label() -> Task {
    Task::SingleLabel
}
fn default_ensemble() -> usize {
    5
}
fn yes() -> bool {
    true
}

impl PipelineConfig {
    /// Reads, resolves relative paths against the file's directory, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let VideoInput::Directory { root } = &mut self.videos {
            fix(root);
        }
        if let Some(ws) = &mut self.workspace {
            fix(ws);
        }
        if let Some(ExperimentConfig { dataset: DatasetConfig::File { path }, .. }) = &mut self.experiment {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_sources(&self.sources)?;
        if !(self.cuts.threshold >= 0.0) {
            return Err(Error::Config(format!("cut threshold {} must be non-negative", self.cuts.threshold)));
        }
        if !(self.chunk.length_s > 0.0) {
            return Err(Error::Config("snippet length must be positive".into()));
        }
        for s in &self.sources {
            if s.chunk_stride_s > self.chunk.length_s {
                return Err(Error::Config(format!("source '{}' stride exceeds the snippet length", s.id)));
            }
        }
        let d = &self.detection;
        if !(0.0..=1.0).contains(&d.score_threshold) || !(0.0..=1.0).contains(&d.iou_threshold) {
            return Err(Error::Config("detection thresholds must lie in [0, 1]".into()));
        }
        if !(self.relevance.min_precision > 0.0 && self.relevance.min_precision <= 1.0) {
            return Err(Error::Config("relevance min_precision must lie in (0, 1]".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let VideoInput::Decoder { command, videos } = &self.videos {
            if command.is_empty() {
                return Err(Error::Config("decoder command is empty".into()));
            }
            for v in videos {
                self.check_source(&v.source_id, &v.video_ref)?;
                if !(v.fps > 0.0) {
                    return Err(Error::Config(format!("video '{}' has non-positive fps", v.video_ref)));
                }
            }
        }
        if let EmbedderConfig::Synthetic { labels, dim, .. } = &self.embedder {
            if labels.is_empty() || labels.len() > *dim {
                return Err(Error::Config("synthetic embedder needs 1..=dim labels".into()));
            }
        }
        if let Some(e) = &self.experiment {
            if e.classes.len() < 2 {
                return Err(Error::Config("experiment needs at least two classes".into()));
            }
            if e.ensemble == 0 {
                return Err(Error::Config("ensemble size must be at least 1".into()));
            }
        }
        if let Some(j) = &self.jepa {
            j.validate()?;
        }
        Ok(())
    }

    pub fn check_source(&self, source_id: &str, video_ref: &str) -> Result<()> {
        if self.sources.iter().any(|s| s.id == source_id) {
            Ok(())
        } else {
            Err(Error::Config(format!("video '{video_ref}' names unknown source '{source_id}'")))
        }
    }

    pub fn source(&self, id: &str) -> Option<&SourceDataset> {
        self.sources.iter().find(|s| s.id == id)
    }

    /// SHA-256 of the canonical JSON form, hex-encoded. The workspace
    /// location and worker count do not affect outputs and are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workspace = None;
        c.workers = None;
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("in-memory serialization")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "sources": [{"id": "zoo", "setting": "captive", "species": ["chimpanzee"], "diversity": "low",
                         "target_proportion": 1.0, "chunk_stride_s": 2.0}],
            "videos": {"kind": "directory", "root": "corpus"},
            "embedder": {"kind": "synthetic", "dim": 8, "noise_std": 1.0, "separation": 8.0, "labels": ["a", "b"]},
            "detector": {"kind": "http", "base_url": "http://127.0.0.1:9"}
        })
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg: PipelineConfig = serde_json::from_value(minimal()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.cuts.threshold, 27.0);
        assert_eq!(cfg.chunk.length_s, 3.0);
        assert_eq!(cfg.detection.iou_threshold, 0.5);
        assert_eq!(cfg.detection.score_threshold, 0.35);
        assert_eq!(cfg.relevance.min_precision, 0.9);
        let DetectorConfig::Http(h) = &cfg.detector else { panic!() };
        assert_eq!(h.max_in_flight, 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = minimal();
        v["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<PipelineConfig>(v).is_err());
        let mut v = minimal();
        v["cuts"] = serde_json::json!({"threshhold": 30});
        assert!(serde_json::from_value::<PipelineConfig>(v).is_err());
        let mut v = minimal();
        v["detector"]["base_urll"] = serde_json::json!("x");
        assert!(serde_json::from_value::<PipelineConfig>(v).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut v = minimal();
        v["sources"][0]["target_proportion"] = serde_json::json!(1.5);
        let cfg: PipelineConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate().is_err());
        let mut v = minimal();
        v["detection"] = serde_json::json!({"iou_threshold": 2.0});
        let cfg: PipelineConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a: PipelineConfig = serde_json::from_value(minimal()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.workers = Some(4);
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
