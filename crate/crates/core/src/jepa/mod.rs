//! Toy latent-prediction pretraining: block masking over a token grid, a
//! context encoder and predictor trained with an L1 loss against an EMA
//! target encoder, plus collapse diagnostics.

mod model;
mod train;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::{LrSchedule, ParamSet};
use crate::providers::CropRect;
use crate::rng::Rng;

pub use model::{jepa_loss, Encoder, JepaModel, Predictor};
pub use train::{run_pretrain, ClipSource, Diagnostic, PretrainOutcome, SyntheticMotion, Trainer};

/// Side length crops are resized to before encoding.
pub const CROP_OUTPUT_SIZE: u32 = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, t: usize, h: usize, w: usize) -> usize {
        (t * self.h + h) * self.w + w
    }
}

/// How prediction targets are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Separate target encoder, updated only by EMA; targets carry no gradient.
    Ema,
    /// Ablation: the context encoder produces its own targets and gradients
    /// flow through both branches.
    SharedNoStopGrad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JepaConfig {
    pub grid: Grid,
    /// Width of the raw input tokens.
    pub in_dim: usize,
    pub d: usize,
    pub heads: usize,
    pub encoder_depth: usize,
    pub predictor_depth: usize,
    pub mask_ratio: f64,
    pub mask_block: Grid,
    pub ema_start: f64,
    pub ema_end: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub target_mode: TargetMode,
    pub seed: u64,
}

impl JepaConfig {
    /// Desk-scale defaults: 2×4×4 grid, d = 32, 2 encoder blocks, 1 predictor block.
    pub fn toy() -> Self {
        Self {
            grid: Grid { t: 2, h: 4, w: 4 },
            in_dim: 16,
            d: 32,
            heads: 4,
            encoder_depth: 2,
            predictor_depth: 1,
            mask_ratio: 0.5,
            mask_block: Grid { t: 2, h: 2, w: 2 },
            ema_start: 0.996,
            ema_end: 1.0,
            steps: 2000,
            batch_size: 4,
            lr: LrSchedule::WarmupConstant { base_lr: 1e-3, warmup_steps: 100 },
            target_mode: TargetMode::Ema,
            seed: 0,
        }
    }

    /// Continued-pretraining schedule on the toy architecture:
    /// constant 1.5e-5 after warmup, 75k steps, batch 80.
    pub fn continued_pretraining() -> Self {
        Self {
            steps: 75_000,
            batch_size: 80,
            lr: LrSchedule::WarmupConstant { base_lr: 1.5e-5, warmup_steps: 1_000 },
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(!self.grid.is_empty(), "empty token grid");
        contract!(self.in_dim > 0 && self.d > 0, "token widths must be positive");
        contract!(self.heads > 0 && self.d % self.heads == 0, "width {} not divisible by {} heads", self.d, self.heads);
        contract!(self.encoder_depth >= 1 && self.predictor_depth >= 1, "encoder and predictor need at least one block");
        contract!(self.mask_ratio > 0.0 && self.mask_ratio < 1.0, "mask ratio {} outside (0, 1)", self.mask_ratio);
        check_block(&self.grid, &self.mask_block)?;
        contract!(
            (0.0..=1.0).contains(&self.ema_start) && (0.0..=1.0).contains(&self.ema_end),
            "EMA momentum outside [0, 1]"
        );
        contract!(self.steps > 0 && self.batch_size > 0, "steps and batch size must be positive");
        Ok(())
    }

    /// Momentum at `step`, linear from `ema_start` to `ema_end`.
    pub fn momentum_at(&self, step: u64) -> f64 {
        let p = (step as f64 / self.steps as f64).min(1.0);
        self.ema_start + (self.ema_end - self.ema_start) * p
    }
}

fn check_block(grid: &Grid, block: &Grid) -> Result<()> {
    contract!(!block.is_empty(), "empty mask block");
    contract!(block.t <= grid.t && block.h <= grid.h && block.w <= grid.w, "mask block {:?} does not fit grid {:?}", block, grid);
    Ok(())
}

/// Split of the token grid into masked (predicted) and visible (context)
/// indices, both ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
}

impl MaskSpec {
    pub fn from_flags(flags: &[bool]) -> Result<Self> {
        let masked: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
        let visible: Vec<usize> = (0..flags.len()).filter(|&i| !flags[i]).collect();
        if masked.is_empty() || visible.is_empty() {
            return Err(Error::InvalidInput("mask must be non-empty and leave some tokens visible".into()));
        }
        Ok(Self { masked, visible })
    }

    pub fn ratio(&self) -> f64 {
        self.masked.len() as f64 / (self.masked.len() + self.visible.len()) as f64
    }
}

const MAX_MASK_ATTEMPTS: usize = 1000;

/// Masks randomly placed blocks until at least `ratio` of the grid is
/// covered. Draws that would mask every token are redrawn.
pub fn sample_mask(grid: &Grid, ratio: f64, block: &Grid, rng: &mut Rng) -> Result<MaskSpec> {
    contract!(ratio > 0.0 && ratio < 1.0, "mask ratio {} outside (0, 1)", ratio);
    check_block(grid, block)?;
    let n = grid.len();
    let need = ratio * n as f64;
    for _ in 0..MAX_MASK_ATTEMPTS {
        let mut flags = alloc::vec![false; n];
        let mut count = 0usize;
        while (count as f64) < need {
            let t0 = rng.below(grid.t - block.t + 1);
            let h0 = rng.below(grid.h - block.h + 1);
            let w0 = rng.below(grid.w - block.w + 1);
            for t in t0..t0 + block.t {
                for h in h0..h0 + block.h {
                    for w in w0..w0 + block.w {
                        let i = grid.index(t, h, w);
                        if !flags[i] {
                            flags[i] = true;
                            count += 1;
                        }
                    }
                }
            }
        }
        if count < n {
            return MaskSpec::from_flags(&flags);
        }
    }
    Err(Error::Contract(alloc::format!("block {block:?} cannot leave visible tokens at ratio {ratio}")))
}

/// `θ̄ ← m·θ̄ + (1 − m)·θ`, element-wise.
pub fn ema_update(target: &mut ParamSet, context: &ParamSet, momentum: f64) -> Result<()> {
    contract!((0.0..=1.0).contains(&momentum), "momentum {} outside [0, 1]", momentum);
    contract!(target.len() == context.len(), "parameter sets differ in length");
    for (t, c) in target.tensors_mut().iter_mut().zip(context.tensors()) {
        contract!(t.shape() == c.shape(), "parameter shapes differ");
        for (a, &b) in t.data_mut().iter_mut().zip(c.data()) {
            *a = momentum * *a + (1.0 - momentum) * b;
        }
    }
    Ok(())
}

/// Square crop around `box_` with side `s · max(width, height)`, `s` drawn
/// from `[jitter.0, jitter.1]`, centered on the box, clamped per axis to the
/// frame and shifted to lie inside it.
pub fn crop_around_box(frame_width: f64, frame_height: f64, box_: &CropRect, jitter: (f64, f64), rng: &mut Rng) -> Result<CropRect> {
    contract!(frame_width > 0.0 && frame_height > 0.0, "empty frame");
    contract!(jitter.0 >= 1.0 && jitter.1 >= jitter.0, "scale jitter must satisfy 1 ≤ lo ≤ hi");
    if !(box_.width() > 0.0 && box_.height() > 0.0) {
        return Err(Error::InvalidInput("degenerate box with zero area".into()));
    }
    contract!(
        box_.x1 >= 0.0 && box_.y1 >= 0.0 && box_.x2 <= frame_width && box_.y2 <= frame_height,
        "box outside the frame"
    );
    let scale = if jitter.1 > jitter.0 { rng.uniform_range(jitter.0, jitter.1) } else { jitter.0 };
    let side = scale * box_.width().max(box_.height());
    let fit = |center: f64, len: f64, limit: f64| {
        let len = len.min(limit);
        let lo = (center - 0.5 * len).clamp(0.0, limit - len);
        (lo, lo + len)
    };
    let (x1, x2) = fit(0.5 * (box_.x1 + box_.x2), side, frame_width);
    let (y1, y2) = fit(0.5 * (box_.y1 + box_.y2), side, frame_height);
    Ok(CropRect { x1, y1, x2, y2 })
}
