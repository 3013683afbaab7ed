use alloc::format;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{contract, Result};
use crate::rng::Rng;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Std of the Gaussian used for weight matrices.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, std: f64, rng: &mut Rng) -> Self {
        let weight = params.add(format!("{name}.weight"), Tensor::randn(&[fan_in, fan_out], std, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.weight), p.var(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta), LAYER_NORM_EPS)
    }
}

/// Pre-norm transformer block: `X + MHSA(LN(X))`, then `+ MLP(LN(·))` with a
/// 4× GELU hidden layer. No attention mask and no positional terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionBlock {
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
    pub width: usize,
}

pub const MLP_RATIO: usize = 4;

impl AttentionBlock {
    pub fn new(params: &mut ParamSet, name: &str, width: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        contract!(heads > 0 && width % heads == 0, "width {} not divisible by {} heads", width, heads);
        let hidden = width * MLP_RATIO;
        Ok(Self {
            norm1: LayerNorm::new(params, &format!("{name}.norm1"), width),
            qkv: Linear::new(params, &format!("{name}.qkv"), width, 3 * width, INIT_STD, rng),
            proj: Linear::new(params, &format!("{name}.proj"), width, width, INIT_STD, rng),
            norm2: LayerNorm::new(params, &format!("{name}.norm2"), width),
            fc1: Linear::new(params, &format!("{name}.fc1"), width, hidden, INIT_STD, rng),
            fc2: Linear::new(params, &format!("{name}.fc2"), hidden, width, INIT_STD, rng),
            heads,
            width,
        })
    }

    /// Closed-form parameter count of one block.
    pub fn param_count(width: usize) -> usize {
        let hidden = width * MLP_RATIO;
        2 * width + (width * 3 * width + 3 * width) + (width * width + width) + 2 * width + (width * hidden + hidden) + (hidden * width + width)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let cols = g.value(x).cols();
        contract!(cols == self.width, "block width {} got tokens of width {}", self.width, cols);
        let h = self.norm1.forward(g, p, x)?;
        let qkv = self.qkv.forward(g, p, h)?;
        let att = g.attention(qkv, self.heads)?;
        let att = self.proj.forward(g, p, att)?;
        let x = g.add(x, att)?;
        let h = self.norm2.forward(g, p, x)?;
        let h = self.fc1.forward(g, p, h)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, p, h)?;
        g.add(x, h)
    }
}
