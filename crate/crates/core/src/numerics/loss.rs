//! Classification and regression losses on top of [`Graph`] ops.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use crate::error::{contract, Result};

/// Ground truth for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    MultiLabel(Vec<f64>),
}

pub fn cross_entropy(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    g.cross_entropy(logits, label)
}

/// Mean over classes of sigmoid binary cross-entropy.
pub fn binary_cross_entropy(g: &mut Graph, logits: Var, targets: &[f64]) -> Result<Var> {
    let ones = vec![1.0; targets.len()];
    g.weighted_bce(logits, targets, &ones)
}

pub fn l1(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    g.l1(pred, target)
}

/// Equalization loss. Classes whose training frequency is below `lambda`
/// receive no discouraging (negative) gradient unless they are part of the
/// ground truth. Single-label targets use the softmax form (rare non-target
/// classes drop out of the partition sum); multi-label targets use the
/// sigmoid form (rare negatives get zero weight). `lambda = 0` reduces to
/// plain cross-entropy / BCE.
pub fn eql(g: &mut Graph, logits: Var, target: &Target, class_freqs: &[f64], lambda: f64) -> Result<Var> {
    let c = g.value(logits).len();
    contract!(class_freqs.len() == c, "{} class frequencies for {} classes", class_freqs.len(), c);
    let total: f64 = class_freqs.iter().sum();
    contract!((total - 1.0).abs() < 1e-6, "class frequencies sum to {}, expected 1", total);
    let rare = |k: usize| class_freqs[k] < lambda;
    match target {
        Target::Class(label) => {
            contract!(*label < c, "label {} out of range for {} classes", label, c);
            let weights: Vec<f64> = (0..c).map(|k| if k != *label && rare(k) { 0.0 } else { 1.0 }).collect();
            g.weighted_softmax_ce(logits, *label, &weights)
        }
        Target::MultiLabel(y) => {
            contract!(y.len() == c, "{} targets for {} classes", y.len(), c);
            let weights: Vec<f64> = (0..c).map(|k| if rare(k) { y[k] } else { 1.0 }).collect();
            g.weighted_bce(logits, y, &weights)
        }
    }
}
