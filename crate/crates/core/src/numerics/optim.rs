use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{contract, Error, Result};

/// Learning-rate schedule indexed by optimizer step (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// Linear warmup from 0 to `base_lr`, then cosine decay to
    /// `final_lr_fraction · base_lr` at `total_steps`.
    WarmupCosine { base_lr: f64, warmup_steps: u64, total_steps: u64, final_lr_fraction: f64 },
    /// Linear warmup, then constant `base_lr`.
    WarmupConstant { base_lr: f64, warmup_steps: u64 },
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::WarmupCosine { base_lr, warmup_steps, total_steps, final_lr_fraction } => {
                if step < warmup_steps {
                    return base_lr * step as f64 / warmup_steps as f64;
                }
                let decay_steps = total_steps.saturating_sub(warmup_steps);
                let floor = final_lr_fraction * base_lr;
                if decay_steps == 0 {
                    return base_lr;
                }
                let progress = ((step - warmup_steps) as f64 / decay_steps as f64).min(1.0);
                floor + (base_lr - floor) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
            }
            LrSchedule::WarmupConstant { base_lr, warmup_steps } => {
                if step < warmup_steps {
                    base_lr * step as f64 / warmup_steps as f64
                } else {
                    base_lr
                }
            }
        }
    }

    pub fn total_steps(&self) -> Option<u64> {
        match *self {
            LrSchedule::WarmupCosine { total_steps, .. } => Some(total_steps),
            LrSchedule::WarmupConstant { .. } => None,
        }
    }
}

/// Adam moments, step counter and schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    /// Global-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, schedule: LrSchedule) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, schedule, clip_norm: None, step: 0, first: zeros(), second: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.schedule.lr_at(step)
    }

    /// Applies one update and returns the learning rate used. A non-finite
    /// gradient aborts the step and leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<f64> {
        contract!(grads.len() == params.len(), "{} gradients for {} parameters", grads.len(), params.len());
        if let Some(total) = self.schedule.total_steps() {
            contract!(self.step < total, "step {} beyond schedule end {}", self.step, total);
        }
        for (i, (g, t)) in grads.iter().zip(params.tensors()).enumerate() {
            contract!(g.len() == t.len(), "gradient {} has {} values for {}", i, g.len(), t.len());
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericFault(format!(
                    "non-finite gradient in parameter '{}' at element {} (step {})",
                    params.names()[i],
                    j,
                    self.step
                )));
            }
        }
        let mut clip = 1.0;
        if let Some(max_norm) = self.clip_norm {
            let norm = libm::sqrt(grads.iter().flatten().map(|v| v * v).sum::<f64>());
            if norm > max_norm {
                clip = max_norm / norm;
            }
        }
        let lr = self.schedule.lr_at(self.step);
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for ((t, g), (m, v)) in params.tensors_mut().iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for (((p, &gr), mi), vi) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gr = gr * clip;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gr;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gr * gr;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(lr)
    }
}
