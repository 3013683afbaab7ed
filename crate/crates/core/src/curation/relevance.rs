//! Relevance filtering: a two-layer MLP on keyframe embeddings, its
//! precision/recall report, and precision-constrained threshold selection.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::types::{DiscardReason, Snippet};
use crate::error::{contract, Error, Result};
use crate::metrics::{pr_curve, roc_auc, roc_curve, PrPoint, RocPoint};
use crate::numerics::{Adam, Graph, Linear, LrSchedule, ParamSet, Tensor};
use crate::rng::RngSeed;

/// Default minimum precision for the operating point.
pub const DEFAULT_MIN_PRECISION: f64 = 0.90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelevanceConfig {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub val_fraction: f64,
    pub min_precision: f64,
    pub seed: u64,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        Self { hidden_dim: 256, dropout: 0.1, epochs: 30, batch_size: 64, base_lr: 1e-3, val_fraction: 0.2, min_precision: DEFAULT_MIN_PRECISION, seed: 0 }
    }
}

/// `sigmoid(fc2(gelu(fc1(x))))`, with the decision threshold fixed at export.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub params: ParamSet,
    fc1: Linear,
    fc2: Linear,
    pub threshold: f64,
}

impl RelevanceModel {
    pub fn new(input_dim: usize, hidden_dim: usize, seed: RngSeed) -> Result<Self> {
        contract!(input_dim > 0 && hidden_dim > 0, "relevance MLP dimensions must be positive");
        let mut rng = seed.rng();
        let mut params = ParamSet::new();
        let fc1 = Linear::new(&mut params, "fc1", input_dim, hidden_dim, 1.0 / libm::sqrt(input_dim as f64), &mut rng);
        let fc2 = Linear::new(&mut params, "fc2", hidden_dim, 1, 1.0 / libm::sqrt(hidden_dim as f64), &mut rng);
        Ok(Self { input_dim, hidden_dim, params, fc1, fc2, threshold: 0.5 })
    }

    /// Rebuilds a model from flat parameter values (declaration order).
    pub fn from_flat(input_dim: usize, hidden_dim: usize, threshold: f64, values: &[f64]) -> Result<Self> {
        let mut m = Self::new(input_dim, hidden_dim, RngSeed::new(0, 0))?;
        m.params.load_flat(values)?;
        contract!((0.0..1.0).contains(&threshold) && threshold > 0.0, "threshold {} outside (0, 1)", threshold);
        m.threshold = threshold;
        Ok(m)
    }

    fn batch_tensor(&self, xs: &[&[f32]]) -> Result<Tensor> {
        for x in xs {
            contract!(x.len() == self.input_dim, "embedding of dim {} for model of dim {}", x.len(), self.input_dim);
        }
        Tensor::new(&[xs.len(), self.input_dim], xs.iter().flat_map(|x| x.iter().map(|&v| v as f64)).collect())
    }

    /// Logits for a batch; `dropout` is `(p, seed)` during training.
    fn logits(&self, g: &mut Graph, bound: &crate::numerics::Bound, x: Tensor, dropout: Option<(f64, RngSeed)>) -> Result<crate::numerics::Var> {
        let x = g.constant(x);
        let h = self.fc1.forward(g, bound, x)?;
        let mut h = g.gelu(h);
        if let Some((p, seed)) = dropout.filter(|(p, _)| *p > 0.0) {
            let mut rng = seed.rng();
            let shape = g.value(h).shape().to_vec();
            let n = g.value(h).len();
            let mask = (0..n).map(|_| if rng.uniform() < p { 0.0 } else { 1.0 / (1.0 - p) }).collect();
            let mask = g.constant(Tensor::new(&shape, mask)?);
            h = g.mul(h, mask)?;
        }
        self.fc2.forward(g, bound, h)
    }

    /// Relevance probabilities for a batch of embeddings.
    pub fn scores(&self, xs: &[&[f32]]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let z = self.logits(&mut g, &bound, self.batch_tensor(xs)?, None)?;
        let p = g.sigmoid(z);
        Ok(g.value(p).data().to_vec())
    }

    pub fn score(&self, x: &[f32]) -> Result<f64> {
        Ok(self.scores(&[x])?[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// False when no point reaches `min_precision`; the threshold then maximizes precision.
    pub attained: bool,
}

/// Maximizes recall subject to `precision ≥ min_precision`; ties prefer higher
/// precision, then the higher threshold. Falls back to the precision-maximizing
/// point (ties: higher recall) with `attained = false`.
pub fn select_threshold(curve: &[PrPoint], min_precision: f64) -> Result<ThresholdChoice> {
    contract!(!curve.is_empty(), "empty precision-recall curve");
    let key = |p: &PrPoint| (p.recall, p.precision, p.threshold);
    let better = |a: &PrPoint, b: &PrPoint, k: &dyn Fn(&PrPoint) -> (f64, f64, f64)| {
        let (x, y) = (k(a), k(b));
        x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.total_cmp(&y.2)).is_gt()
    };
    let mut best: Option<&PrPoint> = None;
    for p in curve.iter().filter(|p| p.precision >= min_precision) {
        if best.is_none_or(|b| better(p, b, &key)) {
            best = Some(p);
        }
    }
    if let Some(b) = best {
        return Ok(ThresholdChoice { threshold: b.threshold, precision: b.precision, recall: b.recall, attained: true });
    }
    let pkey = |p: &PrPoint| (p.precision, p.recall, p.threshold);
    let mut best = &curve[0];
    for p in &curve[1..] {
        if better(p, best, &pkey) {
            best = p;
        }
    }
    Ok(ThresholdChoice { threshold: best.threshold, precision: best.precision, recall: best.recall, attained: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub n_train: usize,
    pub n_val: usize,
    pub roc_auc: f64,
    pub pr_curve: Vec<PrPoint>,
    pub roc_curve: Vec<RocPoint>,
    pub choice: ThresholdChoice,
    pub val_scores: Vec<f64>,
    pub val_labels: Vec<bool>,
    pub final_train_loss: f64,
}

/// Stratified train/validation split of `(embedding, relevant)` pairs.
fn stratified_split(labels: &[bool], val_fraction: f64, seed: RngSeed) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = seed.rng();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            let name = if class { "relevant" } else { "irrelevant" };
            return Err(Error::InvalidInput(alloc::format!(
                "relevance training needs the {name} class in both train and validation splits, found {} example(s)",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let n_val = (libm::round(idx.len() as f64 * val_fraction) as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Trains the relevance MLP with BCE, evaluates on a held-out split and
/// fixes the threshold with [`select_threshold`].
pub fn train_relevance(data: &[(Vec<f32>, bool)], config: &RelevanceConfig) -> Result<(RelevanceModel, RelevanceReport)> {
    contract!(!data.is_empty(), "no labeled embeddings");
    contract!(config.val_fraction > 0.0 && config.val_fraction < 1.0, "validation fraction must lie in (0, 1)");
    contract!(config.batch_size > 0 && config.epochs > 0, "batch size and epochs must be positive");
    let dim = data[0].0.len();
    let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
    let seed = RngSeed::new(config.seed, 0x5E1);
    let (train, val) = stratified_split(&labels, config.val_fraction, seed.fork(0))?;
    let mut model = RelevanceModel::new(dim, config.hidden_dim, seed.fork(1))?;
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total = (steps_per_epoch * config.epochs) as u64;
    let schedule = LrSchedule::WarmupCosine { base_lr: config.base_lr, warmup_steps: total / 10, total_steps: total, final_lr_fraction: 0.0 };
    let mut adam = Adam::new(&model.params, schedule);
    let mut order = train.clone();
    let mut shuffle_rng = seed.fork(2).rng();
    let mut last_loss = f64::NAN;
    let mut step = 0u64;
    for _ in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f32]> = batch.iter().map(|&i| data[i].0.as_slice()).collect();
            let ys: Vec<f64> = batch.iter().map(|&i| f64::from(u8::from(data[i].1))).collect();
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g, true);
            let z = model.logits(&mut g, &bound, model.batch_tensor(&xs)?, Some((config.dropout, seed.fork(1000 + step))))?;
            let loss = bce_column(&mut g, z, &ys)?;
            last_loss = g.scalar(loss);
            g.backward(loss)?;
            let grads = model.params.grads(&g, &bound);
            adam.step(&mut model.params, &grads)?;
            step += 1;
        }
    }
    let val_x: Vec<&[f32]> = val.iter().map(|&i| data[i].0.as_slice()).collect();
    let val_scores = model.scores(&val_x)?;
    let val_labels: Vec<bool> = val.iter().map(|&i| labels[i]).collect();
    let curve = pr_curve(&val_scores, &val_labels)?;
    let choice = select_threshold(&curve, config.min_precision)?;
    model.threshold = choice.threshold.clamp(1e-9, 1.0 - 1e-9);
    let report = RelevanceReport {
        n_train: train.len(),
        n_val: val.len(),
        roc_auc: roc_auc(&val_scores, &val_labels)?,
        roc_curve: roc_curve(&val_scores, &val_labels)?,
        pr_curve: curve,
        choice,
        val_scores,
        val_labels,
        final_train_loss: last_loss,
    };
    Ok((model, report))
}

/// BCE over a `[B×1]` logit column.
fn bce_column(g: &mut Graph, z: crate::numerics::Var, ys: &[f64]) -> Result<crate::numerics::Var> {
    let ones = alloc::vec![1.0; ys.len()];
    g.weighted_bce(z, ys, &ones)
}

/// Stores relevance scores and discards kept snippets scoring below
/// `threshold`. Snippets already discarded, or without a score, are left alone.
pub fn apply_relevance(snippets: &mut [Snippet], scores: &BTreeMap<String, f64>, threshold: f64) -> usize {
    let mut discarded = 0;
    for s in snippets.iter_mut().filter(|s| s.kept) {
        if let Some(&score) = scores.get(&s.snippet_id) {
            s.relevance_score = Some(score);
            if score < threshold {
                s.discard(DiscardReason::Irrelevant);
                discarded += 1;
            }
        }
    }
    discarded
}
