use crate::error::{Result, RomlError};
use crate::features::{FeatureSet, PartialPermutation};
use crate::lsap::enumerate_injections;
use crate::prox::nuclear_norm;
use crate::solver::{assemble_d, StackingMode};

/// Largest candidate count [`brute_force_miap`] will enumerate.
pub const MIAP_MAX_CANDIDATES: f64 = 1e6;

/// Number of selection tuples modulo slot reordering:
/// `C(n_1, n) * prod_{k>1} n_k! / (n_k - n)!`.
pub fn miap_search_size(sets: &[FeatureSet], n: usize) -> f64 {
    let falling = |m: usize| (0..n).map(|i| (m - i) as f64).product::<f64>();
    let Some(first) = sets.first() else {
        return 0.0;
    };
    if sets.iter().any(|fs| fs.len() < n) {
        return 0.0;
    }
    let n_fact: f64 = (1..=n).map(|i| i as f64).product();
    let mut size = falling(first.len()) / n_fact;
    for fs in &sets[1..] {
        size *= falling(fs.len());
    }
    size
}

fn combinations(n_src: usize, len: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == len {
        out.push(current.clone());
        return;
    }
    for i in start..n_src {
        current.push(i);
        combinations(n_src, len, i + 1, current, out);
        current.pop();
    }
}

/// Exhaustively minimizes `||D({P^k})||_*` over all selection tuples.
///
/// The first image's selection is enumerated in ascending order only, which
/// removes the slot-reordering symmetry, so the returned tuple is already in
/// canonical form. Among equal objectives the lexicographically smallest tuple
/// wins.
pub fn brute_force_miap(
    sets: &[FeatureSet],
    n: usize,
    mode: StackingMode,
) -> Result<(Vec<PartialPermutation>, f64)> {
    if sets.is_empty() || n == 0 {
        return Err(RomlError::InvalidInput("need at least one image and n >= 1".into()));
    }
    if let Some((k, fs)) = sets.iter().enumerate().find(|(_, fs)| fs.len() < n) {
        return Err(RomlError::Config(format!(
            "n = {n} exceeds the {} features of image {k}",
            fs.len()
        )));
    }
    let size = miap_search_size(sets, n);
    if size > MIAP_MAX_CANDIDATES {
        return Err(RomlError::Oversize(format!(
            "{size:.0} candidate selections exceed the limit of {MIAP_MAX_CANDIDATES:.0}"
        )));
    }

    let mut firsts = Vec::new();
    combinations(sets[0].len(), n, 0, &mut Vec::new(), &mut firsts);
    let rest: Vec<Vec<Vec<usize>>> = sets[1..]
        .iter()
        .map(|fs| {
            let mut all = Vec::new();
            let mut used = vec![false; fs.len()];
            enumerate_injections(fs.len(), n, &mut Vec::new(), &mut used, &mut |s| {
                all.push(s.to_vec())
            });
            all
        })
        .collect();

    let mut best: Option<(Vec<PartialPermutation>, f64)> = None;
    let mut idx = vec![0usize; rest.len()];
    for first in &firsts {
        idx.fill(0);
        loop {
            let mut ppms = Vec::with_capacity(sets.len());
            ppms.push(PartialPermutation::new(sets[0].len(), first.clone())?);
            for (k, choice) in idx.iter().enumerate() {
                ppms.push(PartialPermutation::new(sets[k + 1].len(), rest[k][*choice].clone())?);
            }
            let value = nuclear_norm(&assemble_d(sets, &ppms, mode)?)?;
            if best.as_ref().is_none_or(|(_, b)| value < *b) {
                best = Some((ppms, value));
            }

            // Odometer over images 2..K, last image fastest.
            let mut pos = idx.len();
            let exhausted = loop {
                if pos == 0 {
                    break true;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < rest[pos].len() {
                    break false;
                }
                idx[pos] = 0;
            };
            if exhausted {
                break;
            }
        }
    }
    Ok(best.expect("at least one feasible tuple"))
}
