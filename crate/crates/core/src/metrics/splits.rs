//! Cross-validation folds and label-efficiency subsets over sequence groups.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Groups sample indices by sequence id, in order of first appearance.
fn groups(sequence_ids: &[String]) -> Vec<Vec<usize>> {
    let mut pos: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, s) in sequence_ids.iter().enumerate() {
        let g = *pos.entry(s.as_str()).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[g].push(i);
    }
    out
}

/// `k` folds whose test sets partition the samples. With `by_sequence`, each
/// sequence lands wholly in one test fold.
pub fn kfold_splits(sequence_ids: &[String], k: usize, by_sequence: bool, seed: u64) -> Result<Vec<Fold>> {
    contract!(k >= 2, "k must be at least 2");
    let mut units: Vec<Vec<usize>> = if by_sequence {
        groups(sequence_ids)
    } else {
        (0..sequence_ids.len()).map(|i| alloc::vec![i]).collect()
    };
    if k > units.len() {
        return Err(Error::InvalidInput(alloc::format!("k = {} exceeds {} groups", k, units.len())));
    }
    RngSeed::new(seed, 0xF01D).rng().shuffle(&mut units);
    // Largest units first onto the currently smallest fold keeps folds even.
    units.sort_by_key(|u| core::cmp::Reverse(u.len()));
    let mut tests: Vec<Vec<usize>> = alloc::vec![Vec::new(); k];
    for u in units {
        let f = (0..k).min_by_key(|&f| (tests[f].len(), f)).unwrap();
        tests[f].extend(u);
    }
    let n = sequence_ids.len();
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = alloc::vec![false; n];
            test.iter().for_each(|&i| in_test[i] = true);
            Fold { train: (0..n).filter(|&i| !in_test[i]).collect(), test }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub fraction: f64,
    pub repeat: usize,
    pub sequences: Vec<String>,
    /// Sample indices, ascending.
    pub indices: Vec<usize>,
    pub achieved_fraction: f64,
    /// The target fraction was below the smallest sequence, so one whole
    /// sequence was taken anyway.
    pub deviates: bool,
}

/// For each target fraction, `n_repeats` independent draws of whole sequences
/// whose sample count is as close as the greedy pass gets to the target.
pub fn label_efficiency_subsets(sequence_ids: &[String], fractions: &[f64], n_repeats: usize, seed: u64) -> Result<Vec<Subset>> {
    contract!(!sequence_ids.is_empty(), "empty training set");
    contract!(n_repeats >= 1, "need at least one repeat");
    contract!(fractions.iter().all(|f| *f > 0.0 && *f <= 1.0), "fractions must lie in (0, 1]");
    let groups = groups(sequence_ids);
    let n = sequence_ids.len() as f64;
    let mut out = Vec::new();
    for (fi, &fraction) in fractions.iter().enumerate() {
        let target = fraction * n;
        for repeat in 0..n_repeats {
            let mut order: Vec<usize> = (0..groups.len()).collect();
            RngSeed::new(seed, (fi * 1000 + repeat) as u64).rng().shuffle(&mut order);
            let mut chosen = Vec::new();
            let mut count = 0usize;
            for &g in &order {
                let with = (count + groups[g].len()) as f64;
                if (with - target).abs() < (count as f64 - target).abs() {
                    chosen.push(g);
                    count += groups[g].len();
                }
            }
            let mut deviates = false;
            if chosen.is_empty() {
                let g = *order.iter().min_by_key(|&&g| groups[g].len()).unwrap();
                chosen.push(g);
                count = groups[g].len();
                deviates = true;
            }
            chosen.sort_unstable();
            let mut indices: Vec<usize> = chosen.iter().flat_map(|&g| groups[g].iter().copied()).collect();
            indices.sort_unstable();
            out.push(Subset {
                fraction,
                repeat,
                sequences: chosen.iter().map(|&g| sequence_ids[groups[g][0]].clone()).collect(),
                indices,
                achieved_fraction: count as f64 / n,
                deviates,
            });
        }
    }
    Ok(out)
}

/// Mean with a normal-approximation 95 % interval, `mean ± 1.96·s/√n`
/// (sample standard deviation; zero width for a single value).
pub fn mean_ci95(values: &[f64]) -> Result<(f64, f64, f64)> {
    contract!(!values.is_empty(), "no values");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, mean, mean));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * libm::sqrt(var) / libm::sqrt(n);
    Ok((mean, mean - half, mean + half))
}
