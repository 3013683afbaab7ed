//! Attentive classifier over frozen patch tokens: class tokens attend jointly
//! with projected patch tokens, and each class reads its score from its own
//! token through a scalar head.

mod protocol;
mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numerics::{AttentionBlock, Bound, Graph, LayerNorm, Linear, ParamId, ParamSet, Tensor, Var, INIT_STD};
use crate::rng::RngSeed;

pub use protocol::{
    average_predictions, evaluate_protocol, protocol_views, sample_miniclip_chimpact, view_clip, Corner, Track, View,
    CORNER_CROP_SCALE, VIEW_JITTER_FRAMES,
};
pub use train::{class_frequencies, train_head, HistoryRecord, MiniclipSample, TrainedHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SingleLabel,
    MultiLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Bce,
    Eql,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub d: usize,
    #[serde(default = "defaults::d_prime")]
    pub d_prime: usize,
    #[serde(default = "defaults::layers")]
    pub layers: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    pub classes: usize,
    pub task: Task,
    pub loss: LossKind,
    /// Frequency threshold of the equalization loss.
    #[serde(default = "defaults::eql_lambda")]
    pub eql_lambda: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::base_lr")]
    pub base_lr: f64,
    #[serde(default = "defaults::warmup_fraction")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub final_lr_fraction: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn d_prime() -> usize {
        64
    }
    pub fn layers() -> usize {
        3
    }
    pub fn heads() -> usize {
        8
    }
    pub fn eql_lambda() -> f64 {
        1.76e-3
    }
    pub fn epochs() -> usize {
        40
    }
    pub fn base_lr() -> f64 {
        1e-3
    }
    pub fn warmup_fraction() -> f64 {
        0.1
    }
    pub fn batch_size() -> usize {
        64
    }
}

impl ClassifierConfig {
    /// Defaults for everything but the input width, class count and task.
    pub fn new(d: usize, classes: usize, task: Task) -> Self {
        Self {
            d,
            d_prime: defaults::d_prime(),
            layers: defaults::layers(),
            heads: defaults::heads(),
            classes,
            task,
            loss: match task {
                Task::SingleLabel => LossKind::Ce,
                Task::MultiLabel => LossKind::Bce,
            },
            eql_lambda: defaults::eql_lambda(),
            epochs: defaults::epochs(),
            base_lr: defaults::base_lr(),
            warmup_fraction: defaults::warmup_fraction(),
            final_lr_fraction: 0.0,
            batch_size: defaults::batch_size(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.classes >= 2, "need at least 2 classes, got {}", self.classes);
        contract!(self.layers >= 1, "need at least 1 attention block");
        contract!(self.d_prime >= 1 && self.d_prime <= self.d, "projected width {} must lie in [1, {}]", self.d_prime, self.d);
        contract!(self.heads > 0 && self.d_prime % self.heads == 0, "width {} not divisible by {} heads", self.d_prime, self.heads);
        contract!(
            !matches!((self.task, self.loss), (Task::SingleLabel, LossKind::Bce) | (Task::MultiLabel, LossKind::Ce)),
            "loss {:?} does not fit task {:?}",
            self.loss,
            self.task
        );
        contract!(self.epochs > 0 && self.batch_size > 0, "epochs and batch size must be positive");
        contract!(self.base_lr > 0.0, "learning rate must be positive");
        contract!((0.0..1.0).contains(&self.warmup_fraction), "warmup fraction must lie in [0, 1)");
        contract!(self.eql_lambda >= 0.0, "eql lambda must be non-negative");
        Ok(())
    }

    /// Architecture fields only; heads sharing these can be ensembled.
    pub fn same_architecture(&self, other: &Self) -> bool {
        (self.d, self.d_prime, self.layers, self.heads, self.classes, self.task)
            == (other.d, other.d_prime, other.layers, other.heads, other.classes, other.task)
    }
}

/// Closed-form parameter count: input LayerNorm, projection, blocks, class
/// tokens and per-class heads.
pub fn param_count(d: usize, d_prime: usize, layers: usize, classes: usize) -> usize {
    2 * d + (d * d_prime + d_prime) + layers * AttentionBlock::param_count(d_prime) + classes * d_prime + classes * (d_prime + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveClassifier {
    pub config: ClassifierConfig,
    pub params: ParamSet,
    norm: LayerNorm,
    proj: Linear,
    class_tokens: ParamId,
    blocks: Vec<AttentionBlock>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Logits and probabilities for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl AttentiveClassifier {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RngSeed::new(config.seed, 0xC1A5).rng();
        let mut params = ParamSet::new();
        let (d, dp, c) = (config.d, config.d_prime, config.classes);
        let norm = LayerNorm::new(&mut params, "input_norm", d);
        let proj = Linear::new(&mut params, "proj", d, dp, INIT_STD, &mut rng);
        let class_tokens = params.add("class_tokens", Tensor::randn(&[c, dp], INIT_STD, &mut rng));
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            blocks.push(AttentionBlock::new(&mut params, &format!("block{l}"), dp, config.heads, &mut rng)?);
        }
        let head_w = params.add("head.weight", Tensor::randn(&[c, dp], INIT_STD, &mut rng));
        let head_b = params.add("head.bias", Tensor::zeros(&[c]));
        Ok(Self { config, params, norm, proj, class_tokens, blocks, head_w, head_b })
    }

    /// Rebuilds a classifier from parameters in declaration order.
    pub fn from_flat(config: ClassifierConfig, values: &[f64]) -> Result<Self> {
        let mut m = Self::new(config)?;
        m.params.load_flat(values)?;
        Ok(m)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn param_names(&self) -> &[String] {
        self.params.names()
    }

    /// Builds the forward pass for one sample's `N×D` tokens, returning the
    /// `C` logits. Tokens enter as constants, so no gradient reaches them.
    pub fn logits_graph(&self, g: &mut Graph, p: &Bound, tokens: &Tensor) -> Result<Var> {
        let x = g.constant(tokens.clone());
        self.logits_from(g, p, x)
    }

    pub(crate) fn logits_from(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        contract!(shape.len() == 2 && shape[0] > 0, "token features must be N×D with N ≥ 1, got {:?}", shape);
        contract!(shape[1] == self.config.d, "token width {} does not match classifier input {}", shape[1], self.config.d);
        let c = self.config.classes;
        let h = self.norm.forward(g, p, x)?;
        let h = self.proj.forward(g, p, h)?;
        let mut seq = g.concat_rows(&[p.var(self.class_tokens), h])?;
        for b in &self.blocks {
            seq = b.forward(g, p, seq)?;
        }
        let cls = g.slice_rows(seq, 0, c)?;
        let scores = g.row_dot(cls, p.var(self.head_w))?;
        g.add(scores, p.var(self.head_b))
    }

    /// Softmax (single-label) or element-wise sigmoid (multi-label) of the logits.
    pub fn probabilities(&self, logits: &[f64]) -> Vec<f64> {
        let mut out = logits.to_vec();
        match self.config.task {
            Task::SingleLabel => crate::numerics::softmax_row(&mut out),
            Task::MultiLabel => {
                for z in out.iter_mut() {
                    *z = 1.0 / (1.0 + libm::exp(-*z));
                }
            }
        }
        out
    }

    pub fn forward(&self, tokens: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let z = self.logits_graph(&mut g, &p, tokens)?;
        let logits = g.value(z).data().to_vec();
        let probs = self.probabilities(&logits);
        Ok(Prediction { logits, probs })
    }

    pub fn predict(&self, tokens: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(tokens)?.probs)
    }
}

#[cfg(test)]
mod tests;
