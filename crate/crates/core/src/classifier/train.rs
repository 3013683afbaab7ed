use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{AttentiveClassifier, ClassifierConfig, LossKind, Task};
use crate::error::{contract, Error, Result};
use crate::metrics::{accuracy, map_report, Aggregates, PredictionRecord, Truth};
use crate::numerics::{loss, Adam, Graph, LrSchedule, Target, Tensor};
use crate::rng::RngSeed;

/// Precomputed frozen features of one miniclip view with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniclipSample {
    pub sample_id: String,
    pub tokens: Tensor,
    pub truth: Truth,
    pub sequence_id: String,
    pub view_id: u32,
}

/// One optimizer step. `val_metric` is set on the last step of an epoch
/// when a validation set is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub model: AttentiveClassifier,
    pub history: Vec<HistoryRecord>,
    /// Epoch (0-based) whose weights were returned.
    pub selected_epoch: usize,
    pub best_val_metric: Option<f64>,
    pub warnings: Vec<String>,
}

fn check_sample(config: &ClassifierConfig, s: &MiniclipSample) -> Result<()> {
    contract!(s.tokens.shape().len() == 2 && s.tokens.cols() == config.d, "sample {} tokens {:?} do not match D={}", s.sample_id, s.tokens.shape(), config.d);
    match (&s.truth, config.task) {
        (Truth::Class(c), Task::SingleLabel) => contract!(*c < config.classes, "sample {} class {} out of range", s.sample_id, c),
        (Truth::Labels(l), Task::MultiLabel) => contract!(l.len() == config.classes, "sample {} has {} labels for {} classes", s.sample_id, l.len(), config.classes),
        _ => return Err(Error::Contract(format!("sample {} label does not match task {:?}", s.sample_id, config.task))),
    }
    Ok(())
}

/// Class frequencies of a training set, normalized to sum to one (label
/// occurrences for multi-label data).
pub fn class_frequencies(samples: &[MiniclipSample], classes: usize) -> Vec<f64> {
    let mut counts = alloc::vec![0.0; classes];
    for s in samples {
        match &s.truth {
            Truth::Class(c) => counts[*c] += 1.0,
            Truth::Labels(l) => {
                for (k, &on) in l.iter().enumerate() {
                    if on {
                        counts[k] += 1.0;
                    }
                }
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        for c in counts.iter_mut() {
            *c /= total;
        }
    }
    counts
}

fn target(truth: &Truth) -> Target {
    match truth {
        Truth::Class(c) => Target::Class(*c),
        Truth::Labels(l) => Target::MultiLabel(l.iter().map(|&b| f64::from(u8::from(b))).collect()),
    }
}

/// Accuracy (single-label) or mAP (multi-label) of `model` on `samples`.
pub(crate) fn validation_metric(model: &AttentiveClassifier, samples: &[MiniclipSample]) -> Result<f64> {
    let preds = samples
        .iter()
        .map(|s| Ok(PredictionRecord { sample_id: s.sample_id.clone(), scores: model.predict(&s.tokens)?, truth: s.truth.clone() }))
        .collect::<Result<Vec<_>>>()?;
    match model.config.task {
        Task::SingleLabel => accuracy(&preds),
        Task::MultiLabel => match map_report(&preds, model.config.classes, &[])?.aggregates {
            Aggregates::MultiLabel { map, .. } => Ok(map),
            Aggregates::SingleLabel { acc, .. } => Ok(acc),
        },
    }
}

/// Trains one head with Adam under warmup + cosine decay. With a validation
/// set, the weights of the epoch with the best validation metric are kept
/// (earliest on ties); otherwise the final weights are returned.
pub fn train_head(config: &ClassifierConfig, train: &[MiniclipSample], val: Option<&[MiniclipSample]>) -> Result<TrainedHead> {
    config.validate()?;
    contract!(!train.is_empty(), "empty training set");
    for s in train.iter().chain(val.unwrap_or(&[])) {
        check_sample(config, s)?;
    }
    if let Some(v) = val {
        contract!(!v.is_empty(), "empty validation set");
    }
    let freqs = class_frequencies(train, config.classes);
    let mut warnings = Vec::new();
    if config.task == Task::SingleLabel {
        for (k, f) in freqs.iter().enumerate() {
            if *f == 0.0 {
                warnings.push(format!("class {k} has no training samples"));
            }
        }
    }
    let mut model = AttentiveClassifier::new(config.clone())?;
    let steps_per_epoch = train.len().div_ceil(config.batch_size) as u64;
    let total = steps_per_epoch * config.epochs as u64;
    let warmup = libm::round(config.warmup_fraction * total as f64) as u64;
    let schedule = LrSchedule::WarmupCosine { base_lr: config.base_lr, warmup_steps: warmup, total_steps: total, final_lr_fraction: config.final_lr_fraction };
    let mut adam = Adam::new(&model.params, schedule);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = RngSeed::new(config.seed, 0x7EA1).rng();
    let mut history = Vec::with_capacity(total as usize);
    let mut best: Option<(f64, usize, crate::numerics::ParamSet)> = None;
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &train[i];
                let z = model.logits_graph(&mut g, &p, &s.tokens)?;
                let l = match (config.loss, &s.truth) {
                    (LossKind::Ce, Truth::Class(c)) => loss::cross_entropy(&mut g, z, *c)?,
                    (LossKind::Bce, truth) => match target(truth) {
                        Target::MultiLabel(y) => loss::binary_cross_entropy(&mut g, z, &y)?,
                        Target::Class(_) => unreachable!("validated above"),
                    },
                    (LossKind::Eql, truth) => loss::eql(&mut g, z, &target(truth), &freqs, config.eql_lambda)?,
                    (LossKind::Ce, Truth::Labels(_)) => unreachable!("validated above"),
                };
                losses.push(l);
            }
            let sum = g.add_n(&losses)?;
            let mean = g.scale(sum, 1.0 / batch.len() as f64);
            let train_loss = g.scalar(mean);
            g.backward(mean)?;
            let grads = model.params.grads(&g, &p);
            let step = adam.step_count();
            let lr = adam.step(&mut model.params, &grads)?;
            history.push(HistoryRecord { epoch, step, lr, train_loss, val_metric: None });
        }
        if let Some(v) = val {
            let metric = validation_metric(&model, v)?;
            if let Some(last) = history.last_mut() {
                last.val_metric = Some(metric);
            }
            if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
                best = Some((metric, epoch, model.params.clone()));
            }
        }
    }
    let (selected_epoch, best_val_metric) = match best {
        Some((metric, epoch, params)) => {
            model.params = params;
            (epoch, Some(metric))
        }
        None => (config.epochs - 1, None),
    };
    Ok(TrainedHead { model, history, selected_epoch, best_val_metric, warnings })
}
