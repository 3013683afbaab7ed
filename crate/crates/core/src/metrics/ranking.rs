use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `+inf` for the leading (0, 0) point; JSON `null`.
    #[serde(with = "infinite_as_null")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn check(scores: &[f64], truth: &[bool]) -> Result<()> {
    if scores.len() != truth.len() {
        return Err(Error::Contract(alloc::format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    Ok(())
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(alloc::vec![i]),
        }
    }
    groups
}

/// Precision and recall at every distinct score, predicting positive for
/// `score ≥ threshold`. Thresholds descend, so recall is non-decreasing.
pub fn pr_curve(scores: &[f64], truth: &[bool]) -> Result<Vec<PrPoint>> {
    check(scores, truth)?;
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::InvalidInput("precision-recall curve needs at least one positive".into()));
    }
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut out = Vec::new();
    for g in tie_groups(scores) {
        seen += g.len();
        tp += g.iter().filter(|&&i| truth[i]).count();
        out.push(PrPoint { threshold: scores[g[0]], precision: tp as f64 / seen as f64, recall: tp as f64 / positives as f64 });
    }
    Ok(out)
}

/// All-points average precision with precision made monotone from the right
/// (AVA / PASCAL-2010 style). Tied scores form one operating point.
/// `None` when there are no positives.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<Option<f64>> {
    check(scores, truth)?;
    if !truth.iter().any(|&t| t) {
        return Ok(None);
    }
    let curve = pr_curve(scores, truth)?;
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.iter().zip(envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    Ok(Some(ap))
}

/// ROC-AUC as the Mann–Whitney statistic with average ranks for ties.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    check(scores, truth)?;
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| truth[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// ROC points at every distinct threshold, starting from (0, 0).
pub fn roc_curve(scores: &[f64], truth: &[bool]) -> Result<Vec<RocPoint>> {
    check(scores, truth)?;
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("ROC curve needs both classes".into()));
    }
    let mut out = alloc::vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for g in tie_groups(scores) {
        for &i in &g {
            if truth[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        out.push(RocPoint { threshold: scores[g[0]], fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64 });
    }
    Ok(out)
}
