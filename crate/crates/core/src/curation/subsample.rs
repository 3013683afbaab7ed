//! Metadata-driven subsampling towards target source proportions.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::types::{DiscardReason, Snippet};
use crate::error::{contract, Result};
use crate::rng::{stable_hash, RngSeed};

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub per_source: BTreeMap<String, u64>,
    /// Set when the budget exceeds what the sources can supply, so the final
    /// composition deviates from the targets.
    pub composition_deviates: bool,
}

/// Continuous water level: each source gets `min(available, target·level)`
/// with `level` chosen so the allocations sum to `total`. Sources are capped in
/// order of `available / target`; the rest share the remainder proportionally.
fn water_fill(counts: &[u64], targets: &[f64], total: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..counts.len()).filter(|&i| targets[i] > 0.0).collect();
    order.sort_by(|&a, &b| (counts[a] as f64 / targets[a]).total_cmp(&(counts[b] as f64 / targets[b])).then(a.cmp(&b)));
    let mut ideal = alloc::vec![0.0; counts.len()];
    let mut remaining = total;
    let mut mass: f64 = order.iter().map(|&i| targets[i]).sum();
    let mut k = 0;
    while k < order.len() {
        let i = order[k];
        if counts[i] as f64 <= targets[i] * remaining / mass {
            ideal[i] = counts[i] as f64;
            remaining -= counts[i] as f64;
            mass -= targets[i];
            k += 1;
        } else {
            break;
        }
    }
    for &i in &order[k..] {
        ideal[i] = targets[i] * remaining / mass;
    }
    ideal
}

/// Splits `total_budget` across sources by water-filling on the target
/// proportions, capped by availability. The continuous fill is rounded by
/// largest remainder, so every source lands within one snippet of the
/// continuous optimum and the total equals `min(budget, available)`.
/// Sources with target 0 receive nothing.
pub fn subsample(kept_counts: &BTreeMap<String, u64>, targets: &BTreeMap<String, f64>, total_budget: u64) -> Result<Allocation> {
    let sum: f64 = targets.values().sum();
    contract!(sum <= 1.0 + 1e-9, "targets sum to {} > 1", sum);
    contract!(targets.values().all(|t| (0.0..=1.0).contains(t)), "target outside [0, 1]");
    for id in targets.keys() {
        contract!(kept_counts.contains_key(id), "target for unknown source '{}'", id);
    }
    let ids: Vec<&String> = kept_counts.keys().collect();
    let counts: Vec<u64> = ids.iter().map(|id| kept_counts[*id]).collect();
    let tgt: Vec<f64> = ids.iter().map(|id| targets.get(*id).copied().unwrap_or(0.0)).collect();
    let available: u64 = counts.iter().zip(&tgt).filter(|(_, &t)| t > 0.0).map(|(&c, _)| c).sum();
    let total = total_budget.min(available);
    let ideal = water_fill(&counts, &tgt, total as f64);
    let mut alloc: Vec<u64> = ideal.iter().zip(&counts).map(|(&x, &c)| (libm::floor(x + 1e-9) as u64).min(c)).collect();
    let mut left = total - alloc.iter().sum::<u64>();
    let mut by_remainder: Vec<usize> = (0..ids.len()).filter(|&i| alloc[i] < counts[i] && tgt[i] > 0.0).collect();
    by_remainder.sort_by(|&a, &b| (ideal[b] - alloc[b] as f64).total_cmp(&(ideal[a] - alloc[a] as f64)).then(a.cmp(&b)));
    for i in by_remainder {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    Ok(Allocation {
        per_source: ids.into_iter().cloned().zip(alloc).collect(),
        composition_deviates: total_budget > available,
    })
}

/// Applies an allocation: within each source, keeps a seeded uniform random
/// subset of the currently kept snippets and marks the rest `subsampled_out`.
pub fn apply_allocation(snippets: &mut [Snippet], allocation: &Allocation, seed: u64) {
    let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in snippets.iter().enumerate() {
        if s.kept {
            by_source.entry(s.source_id.as_str()).or_default().push(i);
        }
    }
    let mut drop = Vec::new();
    for (source, mut idx) in by_source {
        let quota = allocation.per_source.get(source).copied().unwrap_or(0) as usize;
        if idx.len() <= quota {
            continue;
        }
        let mut rng = RngSeed::new(seed, stable_hash(source.as_bytes())).rng();
        rng.shuffle(&mut idx);
        drop.extend_from_slice(&idx[quota..]);
    }
    for i in drop {
        snippets[i].discard(DiscardReason::SubsampledOut);
    }
}

pub fn kept_counts(snippets: &[Snippet]) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    for s in snippets {
        *m.entry(s.source_id.clone()).or_insert(0) += u64::from(s.kept);
    }
    m
}
