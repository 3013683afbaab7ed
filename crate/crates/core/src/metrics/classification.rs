use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ranking::average_precision;
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Class(usize),
    Labels(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub scores: Vec<f64>,
    pub truth: Truth,
}

impl PredictionRecord {
    pub fn single(sample_id: impl Into<String>, scores: Vec<f64>, class: usize) -> Self {
        Self { sample_id: sample_id.into(), scores, truth: Truth::Class(class) }
    }

    pub fn multi(sample_id: impl Into<String>, scores: Vec<f64>, labels: Vec<bool>) -> Self {
        Self { sample_id: sample_id.into(), scores, truth: Truth::Labels(labels) }
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn single_labels(preds: &[PredictionRecord]) -> Result<(usize, Vec<(usize, usize)>)> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    let c = preds[0].scores.len();
    let mut out = Vec::with_capacity(preds.len());
    for p in preds {
        contract!(p.scores.len() == c, "sample {} has {} scores, expected {}", p.sample_id, p.scores.len(), c);
        contract!(p.scores.iter().all(|s| s.is_finite()), "sample {} has non-finite scores", p.sample_id);
        match p.truth {
            Truth::Class(t) => {
                contract!(t < c, "sample {} truth {} out of range", p.sample_id, t);
                out.push((argmax(&p.scores), t));
            }
            Truth::Labels(_) => return Err(Error::Contract("accuracy needs single-label records".into())),
        }
    }
    Ok((c, out))
}

/// Top-1 accuracy.
pub fn accuracy(preds: &[PredictionRecord]) -> Result<f64> {
    let (_, pairs) = single_labels(preds)?;
    Ok(pairs.iter().filter(|(p, t)| p == t).count() as f64 / pairs.len() as f64)
}

/// Per-class recall (`None` for classes without support).
pub fn per_class_recall(preds: &[PredictionRecord]) -> Result<Vec<(Option<f64>, usize)>> {
    let (c, pairs) = single_labels(preds)?;
    let mut hit = alloc::vec![0usize; c];
    let mut support = alloc::vec![0usize; c];
    for (p, t) in pairs {
        support[t] += 1;
        if p == t {
            hit[t] += 1;
        }
    }
    Ok((0..c).map(|k| ((support[k] > 0).then(|| hit[k] as f64 / support[k] as f64), support[k])).collect())
}

/// Mean per-class recall over classes with non-zero support.
pub fn balanced_accuracy(preds: &[PredictionRecord]) -> Result<f64> {
    let recalls: Vec<f64> = per_class_recall(preds)?.into_iter().filter_map(|(r, _)| r).collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub class: String,
    /// AP (multi-label) or recall (single-label); `None` when undefined.
    pub value: Option<f64>,
    pub support: usize,
    /// Excluded from the aggregate because the class has no support.
    pub excluded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Aggregates {
    SingleLabel { acc: f64, b_acc: f64 },
    MultiLabel { map: f64, map_w: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetric>,
    pub aggregates: Aggregates,
    pub n_samples: usize,
}

fn class_names(names: &[String], c: usize) -> Vec<String> {
    (0..c).map(|k| names.get(k).cloned().unwrap_or_else(|| alloc::format!("class_{k}"))).collect()
}

/// Acc / B-Acc report with per-class recall.
pub fn single_label_report(preds: &[PredictionRecord], names: &[String]) -> Result<MetricReport> {
    let acc = accuracy(preds)?;
    let b_acc = balanced_accuracy(preds)?;
    let per = per_class_recall(preds)?;
    let names = class_names(names, per.len());
    Ok(MetricReport {
        per_class: per
            .into_iter()
            .zip(names)
            .map(|((value, support), class)| ClassMetric { class, value, support, excluded: support == 0 })
            .collect(),
        aggregates: Aggregates::SingleLabel { acc, b_acc },
        n_samples: preds.len(),
    })
}

/// mAP and support-weighted mAP over `classes` classes. Classes with no
/// positives have undefined AP and are excluded from both means (flagged).
pub fn map_report(preds: &[PredictionRecord], classes: usize, names: &[String]) -> Result<MetricReport> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    for p in preds {
        contract!(p.scores.len() == classes, "sample {} has {} scores, expected {}", p.sample_id, p.scores.len(), classes);
        match &p.truth {
            Truth::Labels(l) => contract!(l.len() == classes, "sample {} has {} labels", p.sample_id, l.len()),
            Truth::Class(_) => return Err(Error::Contract("mAP needs multi-label records".into())),
        }
    }
    let names = class_names(names, classes);
    let mut per_class = Vec::with_capacity(classes);
    for (k, class) in names.into_iter().enumerate() {
        let scores: Vec<f64> = preds.iter().map(|p| p.scores[k]).collect();
        let truth: Vec<bool> = preds.iter().map(|p| matches!(&p.truth, Truth::Labels(l) if l[k])).collect();
        let support = truth.iter().filter(|&&t| t).count();
        let value = average_precision(&scores, &truth)?;
        per_class.push(ClassMetric { class, value, support, excluded: value.is_none() });
    }
    let defined: Vec<(f64, usize)> = per_class.iter().filter_map(|m| m.value.map(|v| (v, m.support))).collect();
    if defined.is_empty() {
        return Err(Error::InvalidInput("no class has a positive sample".into()));
    }
    let map = defined.iter().map(|(v, _)| v).sum::<f64>() / defined.len() as f64;
    let total_support: usize = defined.iter().map(|(_, s)| s).sum();
    let map_w = defined.iter().map(|(v, s)| v * *s as f64).sum::<f64>() / total_support as f64;
    Ok(MetricReport { per_class, aggregates: Aggregates::MultiLabel { map, map_w }, n_samples: preds.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct() {
        let p: Vec<_> = (0..6).map(|i| PredictionRecord::single("s", alloc::vec![if i % 2 == 0 { 1.0 } else { 0.0 }, 0.5], i % 2)).collect();
        assert_eq!(accuracy(&p).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&p).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_majority_predictor() {
        let p: Vec<_> = (0..100).map(|i| PredictionRecord::single("s", alloc::vec![0.9, 0.1], usize::from(i >= 90))).collect();
        assert!((accuracy(&p).unwrap() - 0.9).abs() < 1e-12);
        assert!((balanced_accuracy(&p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    }

    #[test]
    fn empty_input_errors() {
        assert!(accuracy(&[]).is_err());
        assert!(map_report(&[], 3, &[]).is_err());
    }

    #[test]
    fn map_w_weights_by_support() {
        // Class 0: 3 positives perfectly ranked (AP 1). Class 1: one positive ranked last of 4 (AP 0.25).
        let rows = [
            ([0.9, 0.9], [true, false]),
            ([0.8, 0.8], [true, false]),
            ([0.7, 0.7], [true, false]),
            ([0.1, 0.1], [false, true]),
        ];
        let p: Vec<_> = rows.iter().map(|(s, l)| PredictionRecord::multi("s", s.to_vec(), l.to_vec())).collect();
        let r = map_report(&p, 2, &[]).unwrap();
        let Aggregates::MultiLabel { map, map_w } = r.aggregates else { panic!() };
        assert!((map - 0.625).abs() < 1e-12);
        assert!((map_w - (3.0 + 0.25) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_support_class_is_flagged() {
        let p = alloc::vec![
            PredictionRecord::multi("a", alloc::vec![0.9, 0.1, 0.3], alloc::vec![true, false, false]),
            PredictionRecord::multi("b", alloc::vec![0.2, 0.8, 0.3], alloc::vec![false, true, false]),
        ];
        let r = map_report(&p, 3, &[]).unwrap();
        assert!(r.per_class[2].excluded);
        assert_eq!(r.aggregates, Aggregates::MultiLabel { map: 1.0, map_w: 1.0 });
    }
}
