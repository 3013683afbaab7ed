use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::JepaModel;
use super::{ema_update, sample_mask, Grid, JepaConfig, TargetMode};
use crate::error::{Error, Result};
use crate::numerics::{Adam, Graph, Tensor};
use crate::rng::RngSeed;

/// Indexed supply of unlabeled clips as `[grid tokens × in_dim]` arrays.
pub trait ClipSource {
    fn clip(&self, index: u64) -> Result<Tensor>;
}

/// Clips of a few Gaussian blobs, each carrying a random feature vector,
/// drifting across the spatial grid over time on a per-clip background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMotion {
    pub grid: Grid,
    pub in_dim: usize,
    pub objects: usize,
    pub blob_radius: f64,
    pub background_std: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticMotion {
    pub fn new(grid: Grid, in_dim: usize, seed: u64) -> Self {
        Self { grid, in_dim, objects: 2, blob_radius: 0.8, background_std: 0.3, noise_std: 0.05, seed }
    }
}

fn wrapped(d: f64, size: f64) -> f64 {
    let d = d.rem_euclid(size);
    d.min(size - d)
}

impl ClipSource for SyntheticMotion {
    fn clip(&self, index: u64) -> Result<Tensor> {
        let mut rng = RngSeed::new(self.seed, index).rng();
        let (gh, gw) = (self.grid.h as f64, self.grid.w as f64);
        let objs: Vec<(Vec<f64>, f64, f64, f64, f64)> = (0..self.objects)
            .map(|_| {
                let f = (0..self.in_dim).map(|_| rng.normal()).collect();
                (f, rng.uniform_range(0.0, gh), rng.uniform_range(0.0, gw), rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0))
            })
            .collect();
        let bg: Vec<f64> = (0..self.in_dim).map(|_| self.background_std * rng.normal()).collect();
        let mut data = Vec::with_capacity(self.grid.len() * self.in_dim);
        for t in 0..self.grid.t {
            for h in 0..self.grid.h {
                for w in 0..self.grid.w {
                    let mut v = bg.clone();
                    for (f, h0, w0, vh, vw) in &objs {
                        let dh = wrapped(h as f64 - (h0 + vh * t as f64), gh);
                        let dw = wrapped(w as f64 - (w0 + vw * t as f64), gw);
                        let a = libm::exp(-(dh * dh + dw * dw) / (2.0 * self.blob_radius * self.blob_radius));
                        for (x, fv) in v.iter_mut().zip(f) {
                            *x += a * fv;
                        }
                    }
                    data.extend(v.into_iter().map(|x| x + self.noise_std * rng.normal()));
                }
            }
        }
        Tensor::new(&[self.grid.len(), self.in_dim], data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub step: u64,
    pub loss: f64,
    /// Mean per-dimension variance of target representations over the batch.
    pub target_variance: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    /// Last good state (before any aborted step).
    pub model: JepaModel,
    pub diagnostics: Vec<Diagnostic>,
    pub aborted: Option<String>,
}

/// Mean over dimensions of the variance over rows.
fn mean_dim_variance(reps: &[Tensor]) -> f64 {
    let d = reps[0].cols();
    let rows: Vec<&[f64]> = reps.iter().flat_map(|t| (0..t.rows()).map(move |r| t.row(r))).collect();
    let n = rows.len() as f64;
    let mut total = 0.0;
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        total += rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
    }
    total / d as f64
}

/// Optimizer state for step-wise pretraining.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: JepaModel,
    ctx_opt: Adam,
    pred_opt: Adam,
    step: u64,
}

impl Trainer {
    pub fn new(config: JepaConfig) -> Result<Self> {
        let model = JepaModel::new(config)?;
        let ctx_opt = Adam::new(&model.context_params, model.config.lr);
        let pred_opt = Adam::new(&model.predictor_params, model.config.lr);
        Ok(Self { model, ctx_opt, pred_opt, step: 0 })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step on clips `step·B .. step·B + B`. On a numeric
    /// fault nothing is modified.
    pub fn step(&mut self, source: &dyn ClipSource) -> Result<Diagnostic> {
        let cfg = &self.model.config;
        let b = cfg.batch_size as u64;
        let clips = (0..b).map(|i| source.clip(self.step * b + i)).collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new();
        let ctx = self.model.context_params.bind(&mut g, true);
        let pred = self.model.predictor_params.bind(&mut g, true);
        let mut losses = Vec::with_capacity(clips.len());
        let mut reps = Vec::with_capacity(clips.len());
        for (i, tokens) in clips.iter().enumerate() {
            let mut rng = RngSeed::new(cfg.seed, 0x3A5C).fork(self.step * b + i as u64).rng();
            let mask = sample_mask(&cfg.grid, cfg.mask_ratio, &cfg.mask_block, &mut rng)?;
            let target = match cfg.target_mode {
                TargetMode::Ema => Some(self.model.target_representations(tokens)?),
                TargetMode::SharedNoStopGrad => None,
            };
            reps.push(match &target {
                Some(t) => t.clone(),
                None => self.model.encode_all(&self.model.context_params, tokens)?,
            });
            losses.push(self.model.loss_graph(&mut g, &ctx, &pred, tokens, &mask, target.as_ref())?);
        }
        let sum = g.add_n(&losses)?;
        let loss = g.scale(sum, 1.0 / losses.len() as f64);
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NumericFault(format!("non-finite loss at step {}", self.step)));
        }
        g.backward(loss)?;
        let cg = self.model.context_params.grads(&g, &ctx);
        let pg = self.model.predictor_params.grads(&g, &pred);
        let check = |gs: &[Vec<f64>]| gs.iter().flatten().all(|v| v.is_finite());
        if !check(&cg) || !check(&pg) {
            return Err(Error::NumericFault(format!("non-finite gradient at step {}", self.step)));
        }
        let lr = self.ctx_opt.step(&mut self.model.context_params, &cg)?;
        self.pred_opt.step(&mut self.model.predictor_params, &pg)?;
        match cfg.target_mode {
            TargetMode::Ema => {
                let m = cfg.momentum_at(self.step);
                ema_update(&mut self.model.target_params, &self.model.context_params, m)?;
            }
            TargetMode::SharedNoStopGrad => self.model.target_params = self.model.context_params.clone(),
        }
        let diag = Diagnostic { step: self.step, loss: value, target_variance: mean_dim_variance(&reps), lr };
        self.step += 1;
        Ok(diag)
    }
}

/// Runs `config.steps` steps. A numeric fault stops training and returns the
/// last good model with the fault recorded in `aborted`.
pub fn run_pretrain(config: &JepaConfig, source: &dyn ClipSource) -> Result<PretrainOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut diagnostics = Vec::with_capacity(config.steps as usize);
    let mut aborted = None;
    for _ in 0..config.steps {
        match trainer.step(source) {
            Ok(d) => diagnostics.push(d),
            Err(Error::NumericFault(msg)) => {
                aborted = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PretrainOutcome { model: trainer.model, diagnostics, aborted })
}
