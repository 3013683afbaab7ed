use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Recording setting of a source dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Wild,
    SemiFree,
    Captive,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Wild => "wild",
            Setting::SemiFree => "semi_free",
            Setting::Captive => "captive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diversity {
    Low,
    High,
}

/// Metadata of one source dataset feeding the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDataset {
    pub id: String,
    pub setting: Setting,
    pub species: Vec<String>,
    pub diversity: Diversity,
    pub target_proportion: f64,
    pub chunk_stride_s: f64,
}

impl SourceDataset {
    pub fn validate(&self) -> Result<()> {
        contract!(!self.id.is_empty(), "source id is empty");
        contract!(
            (0.0..=1.0).contains(&self.target_proportion),
            "source '{}' target proportion {} outside [0, 1]",
            self.id,
            self.target_proportion
        );
        contract!(
            (1.0..=3.0).contains(&self.chunk_stride_s),
            "source '{}' chunk stride {} outside [1, 3] s",
            self.id,
            self.chunk_stride_s
        );
        Ok(())
    }
}

/// Checks every source and that target proportions sum to at most 1.
pub fn validate_sources(sources: &[SourceDataset]) -> Result<()> {
    for s in sources {
        s.validate()?;
    }
    let total: f64 = sources.iter().map(|s| s.target_proportion).sum();
    contract!(total <= 1.0 + 1e-9, "target proportions sum to {} > 1", total);
    for (i, a) in sources.iter().enumerate() {
        contract!(sources[..i].iter().all(|b| b.id != a.id), "duplicate source id '{}'", a.id);
    }
    Ok(())
}

/// Axis-aligned detection in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    pub label: String,
}

impl DetectionBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, score: f64, label: impl Into<String>) -> Self {
        Self { x1, y1, x2, y2, score, label: label.into() }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Non-degenerate, score in `[0, 1]`, inside a `width × height` frame.
    pub fn validate(&self, width: f64, height: f64) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2, self.score];
        contract!(coords.iter().all(|v| v.is_finite()), "box has non-finite values: {:?}", self);
        contract!(self.x1 < self.x2 && self.y1 < self.y2, "degenerate box {:?}", self);
        contract!((0.0..=1.0).contains(&self.score), "box score {} outside [0, 1]", self.score);
        contract!(
            self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height,
            "box ({}, {}, {}, {}) outside {}x{} frame",
            self.x1,
            self.y1,
            self.x2,
            self.y2,
            width,
            height
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    CutOverlap,
    Irrelevant,
    NoDetection,
    SubsampledOut,
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscardReason::CutOverlap => "cut_overlap",
            DiscardReason::Irrelevant => "irrelevant",
            DiscardReason::NoDetection => "no_detection",
            DiscardReason::SubsampledOut => "subsampled_out",
        })
    }
}

/// One fixed-length chunk of a source video. Field order is the manifest
/// record order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snippet {
    pub snippet_id: String,
    pub source_id: String,
    pub video_ref: String,
    pub start_s: f64,
    pub end_s: f64,
    pub keyframe_time_s: f64,
    pub boxes: Vec<DetectionBox>,
    pub embedding_ref: Option<String>,
    pub relevance_score: Option<f64>,
    pub species: Option<String>,
    pub kept: bool,
    pub discard_reason: Option<DiscardReason>,
}

impl Snippet {
    pub fn new(source_id: &str, video_ref: &str, start_s: f64, end_s: f64) -> Self {
        Self {
            snippet_id: snippet_id(video_ref, start_s),
            source_id: source_id.into(),
            video_ref: video_ref.into(),
            start_s,
            end_s,
            keyframe_time_s: 0.5 * (start_s + end_s),
            boxes: Vec::new(),
            embedding_ref: None,
            relevance_score: None,
            species: None,
            kept: true,
            discard_reason: None,
        }
    }

    pub fn discard(&mut self, reason: DiscardReason) {
        self.kept = false;
        self.discard_reason = Some(reason);
    }

    pub fn validate(&self) -> Result<()> {
        contract!(0.0 <= self.start_s && self.start_s < self.end_s, "snippet {} has bad interval", self.snippet_id);
        contract!(
            (self.keyframe_time_s - 0.5 * (self.start_s + self.end_s)).abs() < 1e-6,
            "snippet {} keyframe is not centered",
            self.snippet_id
        );
        contract!(self.kept == self.discard_reason.is_none(), "snippet {} kept/discard_reason disagree", self.snippet_id);
        if let Some(s) = self.relevance_score {
            contract!((0.0..=1.0).contains(&s), "snippet {} relevance {} outside [0, 1]", self.snippet_id, s);
        }
        Ok(())
    }
}

/// Stable id `<video_ref>@<start in ms>`.
pub fn snippet_id(video_ref: &str, start_s: f64) -> String {
    alloc::format!("{}@{}", video_ref, libm::round(start_s * 1000.0) as u64)
}

/// Cut positions of one video, as frame indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutList {
    pub video_ref: String,
    pub cuts: Vec<u64>,
    pub fps: f64,
}

impl CutList {
    pub fn validate(&self, frame_count: u64) -> Result<()> {
        contract!(self.fps > 0.0, "fps must be positive");
        contract!(self.cuts.windows(2).all(|w| w[0] < w[1]), "cut indices not strictly increasing");
        contract!(self.cuts.iter().all(|&c| c < frame_count), "cut index beyond {} frames", frame_count);
        Ok(())
    }

    /// Cut positions in seconds.
    pub fn times_s(&self) -> Vec<f64> {
        self.cuts.iter().map(|&c| c as f64 / self.fps).collect()
    }
}

/// Packed 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, rgb: Vec<u8>) -> Result<Self> {
        contract!(width > 0 && height > 0, "empty frame");
        contract!(rgb.len() == width as usize * height as usize * 3, "frame buffer size mismatch");
        Ok(Self { width, height, rgb })
    }

    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, rgb: rgb.iter().copied().cycle().take(n * 3).collect() }
    }
}

/// A snippet's center frame plus free-form metadata handed to providers.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub snippet_id: String,
    pub frame: Frame,
    /// Metadata label (used by synthetic providers; real providers ignore it).
    pub label_hint: Option<String>,
}
