use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, FeatureProvenance, FeatureProvider, MiniclipRef, TokenFeatures, TokenLayout};
use crate::curation::{DetectionBox, Keyframe};
use crate::error::{contract, Error, Result};
use crate::numerics::Tensor;
use crate::rng::{stable_hash, RngSeed};

/// Embeds a keyframe as the centroid of its metadata label plus seeded
/// Gaussian noise. The noise seed depends only on the provider seed and the
/// snippet id, so repeated calls agree exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEmbedder {
    pub seed: u64,
    pub dim: usize,
    pub noise_std: f64,
    pub centroids: BTreeMap<String, Vec<f32>>,
}

impl SyntheticEmbedder {
    pub fn new(seed: u64, dim: usize, noise_std: f64, centroids: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        contract!(!centroids.is_empty(), "synthetic embedder needs at least one centroid");
        contract!(centroids.values().all(|c| c.len() == dim), "centroid dimension mismatch");
        contract!(noise_std >= 0.0, "negative noise");
        Ok(Self { seed, dim, noise_std, centroids })
    }

    /// Labels placed on orthogonal axes at pairwise distance
    /// `separation · noise_std`.
    pub fn separated(seed: u64, dim: usize, noise_std: f64, separation: f64, labels: &[&str]) -> Result<Self> {
        contract!(labels.len() <= dim, "need dim ≥ number of labels");
        let mut rng = RngSeed::new(seed, 0xCE47).rng();
        let mut axes: Vec<usize> = (0..dim).collect();
        rng.shuffle(&mut axes);
        let r = separation * noise_std / libm::sqrt(2.0);
        let centroids = labels
            .iter()
            .zip(axes)
            .map(|(l, ax)| {
                let mut c = alloc::vec![0.0f32; dim];
                c[ax] = r as f32;
                (String::from(*l), c)
            })
            .collect();
        Self::new(seed, dim, noise_std, centroids)
    }
}

impl EmbeddingProvider for SyntheticEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, keyframe: &Keyframe) -> Result<Vec<f32>> {
        let label = keyframe
            .label_hint
            .as_deref()
            .ok_or_else(|| Error::InvalidInput(format!("keyframe {} has no label metadata", keyframe.snippet_id)))?;
        let centroid = self
            .centroids
            .get(label)
            .ok_or_else(|| Error::InvalidInput(format!("no centroid for label '{label}'")))?;
        let mut rng = RngSeed::new(self.seed, stable_hash(keyframe.snippet_id.as_bytes())).rng();
        Ok(centroid.iter().map(|&c| c + (self.noise_std * rng.normal()) as f32).collect())
    }
}

/// Box in frame-relative coordinates (`0..1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativeBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    pub label: String,
}

/// Detector stub returning fixed relative boxes, optionally per label hint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticDetector {
    pub default: Vec<RelativeBox>,
    pub by_label: BTreeMap<String, Vec<RelativeBox>>,
}

impl SyntheticDetector {
    /// Never detects anything.
    pub fn empty() -> Self {
        Self::default()
    }

    /// One centered box per frame.
    pub fn single(score: f64, label: &str) -> Self {
        Self { default: alloc::vec![RelativeBox { x1: 0.25, y1: 0.25, x2: 0.75, y2: 0.75, score, label: label.into() }], ..Self::default() }
    }

    pub fn constant(boxes: Vec<RelativeBox>) -> Self {
        Self { default: boxes, ..Self::default() }
    }
}

impl super::DetectorProvider for SyntheticDetector {
    fn detect(&self, keyframe: &Keyframe, _prompt: &str) -> Result<Vec<DetectionBox>> {
        let rel = keyframe.label_hint.as_deref().and_then(|l| self.by_label.get(l)).unwrap_or(&self.default);
        let (w, h) = (keyframe.frame.width as f64, keyframe.frame.height as f64);
        Ok(rel
            .iter()
            .map(|b| DetectionBox::new(b.x1 * w, b.y1 * h, b.x2 * w, b.y2 * h, b.score, b.label.clone()))
            .collect())
    }
}

/// Frozen-encoder stub: every token of a clip labeled `c` is the class mean
/// token plus seeded noise; the noise depends on clip, frames and crop, so
/// different views of one clip differ slightly.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFeatures {
    pub seed: u64,
    pub layout: TokenLayout,
    pub n_tokens: usize,
    pub dim: usize,
    pub noise_std: f64,
    pub classes: Vec<String>,
    pub class_means: Vec<Vec<f64>>,
}

impl SyntheticFeatures {
    /// Class means drawn as `mean_scale · N(0, I)`.
    pub fn new(seed: u64, layout: TokenLayout, dim: usize, classes: &[&str], mean_scale: f64, noise_std: f64) -> Result<Self> {
        let n_tokens = layout.tokens()?;
        contract!(classes.len() >= 2, "need at least two classes");
        let mut rng = RngSeed::new(seed, 0xFEA7).rng();
        let class_means = classes.iter().map(|_| (0..dim).map(|_| mean_scale * rng.normal()).collect()).collect();
        Ok(Self { seed, layout, n_tokens, dim, noise_std, classes: classes.iter().map(|c| String::from(*c)).collect(), class_means })
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }
}

impl FeatureProvider for SyntheticFeatures {
    fn layout(&self) -> TokenLayout {
        self.layout
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, clip: &MiniclipRef) -> Result<TokenFeatures> {
        let label = clip.label_hint.as_deref().ok_or_else(|| Error::InvalidInput(format!("clip {} has no label metadata", clip.clip_ref)))?;
        let c = self.class_index(label).ok_or_else(|| Error::InvalidInput(format!("unknown class '{label}'")))?;
        let key = format!("{}|{:?}|{:?}", clip.clip_ref, clip.frames, clip.crop);
        let mut rng = RngSeed::new(self.seed, stable_hash(key.as_bytes())).rng();
        let mean = &self.class_means[c];
        let data = (0..self.n_tokens).flat_map(|_| mean.iter().map(|m| m + self.noise_std * rng.normal()).collect::<Vec<_>>()).collect();
        let tokens = Tensor::new(&[self.n_tokens, self.dim], data)?;
        TokenFeatures::new(tokens, FeatureProvenance { provider_id: "synthetic".into(), clip_ref: clip.clip_ref.clone(), crop: clip.crop })
    }
}
