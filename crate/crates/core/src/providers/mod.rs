//! Interfaces to the pretrained models the pipeline consumes (frame embedder,
//! zero-shot detector, frozen video encoder), plus deterministic synthetic
//! implementations for tests and fixtures.

mod synthetic;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::curation::{DetectionBox, Keyframe};
use crate::error::{contract, Result};
use crate::numerics::Tensor;

pub use synthetic::{RelativeBox, SyntheticDetector, SyntheticEmbedder, SyntheticFeatures};

/// Image-level embedding of a keyframe.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, keyframe: &Keyframe) -> Result<Vec<f32>>;
}

/// Zero-shot detector prompted with a text query.
pub trait DetectorProvider: Send + Sync {
    fn detect(&self, keyframe: &Keyframe, prompt: &str) -> Result<Vec<DetectionBox>>;
}

/// Frozen video encoder returning the full patch-token grid.
pub trait FeatureProvider: Send + Sync {
    fn layout(&self) -> TokenLayout;
    fn dim(&self) -> usize;
    fn features(&self, clip: &MiniclipRef) -> Result<TokenFeatures>;
}

/// Pixel rectangle `[x1, x2) × [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl CropRect {
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn contains(&self, other: &CropRect, tol: f64) -> bool {
        self.x1 <= other.x1 + tol && self.y1 <= other.y1 + tol && self.x2 >= other.x2 - tol && self.y2 >= other.y2 - tol
    }
}

/// What a feature provider is asked to encode: a clip, the frame indices to
/// sample, and the spatial crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniclipRef {
    pub clip_ref: String,
    pub frames: Vec<u64>,
    pub crop: CropRect,
    /// Metadata label (synthetic providers only).
    pub label_hint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub tubelet: usize,
    pub patch: usize,
}

impl TokenLayout {
    /// 16×224×224 input, 2×16×16 patches.
    pub const VIDEO_DEFAULT: TokenLayout = TokenLayout { frames: 16, height: 224, width: 224, tubelet: 2, patch: 16 };

    pub fn tokens(&self) -> Result<usize> {
        tokenize_layout(self.frames, self.height, self.width, self.tubelet, self.patch)
    }
}

/// Number of non-overlapping `tubelet × patch × patch` tokens.
pub fn tokenize_layout(frames: usize, height: usize, width: usize, tubelet: usize, patch: usize) -> Result<usize> {
    contract!(tubelet > 0 && patch > 0, "tubelet and patch must be positive");
    contract!(frames > 0 && frames % tubelet == 0, "{} frames not divisible by tubelet {}", frames, tubelet);
    contract!(height > 0 && height % patch == 0, "height {} not divisible by patch {}", height, patch);
    contract!(width > 0 && width % patch == 0, "width {} not divisible by patch {}", width, patch);
    Ok((frames / tubelet) * (height / patch) * (width / patch))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProvenance {
    pub provider_id: String,
    pub clip_ref: String,
    pub crop: CropRect,
}

/// `N × D` patch tokens of one miniclip from a frozen encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatures {
    pub tokens: Tensor,
    pub provenance: FeatureProvenance,
}

impl TokenFeatures {
    pub fn new(tokens: Tensor, provenance: FeatureProvenance) -> Result<Self> {
        contract!(tokens.shape().len() == 2, "token features must be N×D, got {:?}", tokens.shape());
        contract!(tokens.is_finite(), "token features contain non-finite values");
        Ok(Self { tokens, provenance })
    }

    pub fn n(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.tokens.shape()[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        assert_eq!(tokenize_layout(16, 224, 224, 2, 16).unwrap(), 1568);
        assert_eq!(TokenLayout::VIDEO_DEFAULT.tokens().unwrap(), 1568);
        assert_eq!(tokenize_layout(2, 16, 16, 2, 16).unwrap(), 1);
        assert_eq!(tokenize_layout(16, 224, 112, 2, 16).unwrap(), 8 * 14 * 7);
        assert!(tokenize_layout(15, 224, 224, 2, 16).is_err());
        assert!(tokenize_layout(16, 220, 224, 2, 16).is_err());
    }
}
