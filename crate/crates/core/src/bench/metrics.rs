use crate::error::{Result, RomlError};
use crate::features::PartialPermutation;
use crate::lsap::{solve_lsap, AssignmentProblem};
use crate::prox::DenseMatrix;
use crate::select::InlierMask;

use super::GroundTruth;

fn check_shapes(found: &[PartialPermutation], truth: &[PartialPermutation]) -> Result<usize> {
    if found.len() != truth.len() {
        return Err(RomlError::Dimension(format!(
            "{} found selections vs {} ground-truth selections",
            found.len(),
            truth.len()
        )));
    }
    let n = truth.first().map_or(0, PartialPermutation::n_targets);
    for (k, (f, t)) in found.iter().zip(truth).enumerate() {
        if f.n_sources() != t.n_sources() || f.n_targets() != n || t.n_targets() != n {
            return Err(RomlError::Dimension(format!(
                "image {k}: found selection is {}x{}, ground truth is {}x{}",
                f.n_sources(),
                f.n_targets(),
                t.n_sources(),
                t.n_targets()
            )));
        }
    }
    Ok(n)
}

/// Slot permutation that best lines `found` up with `truth`: truth slot `j`
/// corresponds to found slot `order[j]`, chosen to maximize the number of
/// agreeing `(image, slot)` entries.
///
/// Solutions are only defined up to a common reordering of slots, so this is
/// the comparison that does not depend on which canonical form was used.
pub fn align_slots(found: &[PartialPermutation], truth: &[PartialPermutation]) -> Result<Vec<usize>> {
    let n = check_shapes(found, truth)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut cost = DenseMatrix::zeros(n, n);
    for (f, t) in found.iter().zip(truth) {
        for a in 0..n {
            for j in 0..n {
                if f.source(a) == t.source(j) {
                    cost[(a, j)] -= 1.0;
                }
            }
        }
    }
    let (assignment, _) = solve_lsap(&AssignmentProblem::new(cost)?);
    Ok(assignment.target_to_source)
}

/// Fraction of ground-truth selection entries reproduced, i.e.
/// `sum_k |P^k o P^k*|_0 / sum_k |P^k*|_0` after slot alignment.
pub fn recovery_rate(found: &[PartialPermutation], truth: &[PartialPermutation]) -> Result<f64> {
    let order = align_slots(found, truth)?;
    let n = order.len();
    if n == 0 || truth.is_empty() {
        return Ok(1.0);
    }
    let hits: usize = found
        .iter()
        .zip(truth)
        .map(|(f, t)| (0..n).filter(|&j| f.source(order[j]) == t.source(j)).count())
        .sum();
    Ok(hits as f64 / (n * truth.len()) as f64)
}

/// Pairwise match ratio and identification ratio.
///
/// For every pair of images, `n` is the number of correspondences found,
/// `n*` the number of inliers present in both images, and `n_bar` the number of
/// found correspondences linking the same inlier. Returns
/// `(sum n_bar / sum n, sum n_bar / sum n*)`.
pub fn match_identification_ratios(
    found: &[PartialPermutation],
    truth: &GroundTruth,
) -> Result<(f64, f64)> {
    if found.len() != truth.labels.len() {
        return Err(RomlError::Dimension(format!(
            "{} selections for {} labelled images",
            found.len(),
            truth.labels.len()
        )));
    }
    for (k, (p, labels)) in found.iter().zip(&truth.labels).enumerate() {
        if p.n_sources() != labels.len() {
            return Err(RomlError::Dimension(format!(
                "image {k}: selection over {} sources but {} labels",
                p.n_sources(),
                labels.len()
            )));
        }
    }
    let ids: Vec<Vec<usize>> = truth
        .labels
        .iter()
        .map(|l| {
            let mut v: Vec<usize> = l.iter().flatten().copied().collect();
            v.sort_unstable();
            v
        })
        .collect();

    let (mut found_total, mut truth_total, mut hits) = (0usize, 0usize, 0usize);
    for p in 0..found.len() {
        for q in p + 1..found.len() {
            found_total += found[p].n_targets().min(found[q].n_targets());
            truth_total += ids[p].iter().filter(|a| ids[q].binary_search(a).is_ok()).count();
            hits += found[p]
                .target_to_source()
                .iter()
                .zip(found[q].target_to_source())
                .filter(|&(&i, &i2)| {
                    matches!((truth.labels[p][i], truth.labels[q][i2]), (Some(a), Some(b)) if a == b)
                })
                .count();
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok((ratio(hits, found_total), ratio(hits, truth_total)))
}

/// Precision and recall of inlier detection among the selected features.
///
/// A detected feature counts as correct when it is a genuine inlier of its
/// image. Recall divides by all genuine inliers across the images. An empty
/// detection has precision 1 and recall 0.
pub fn detection_precision_recall(
    mask: &InlierMask,
    truth: &GroundTruth,
    found: &[PartialPermutation],
) -> Result<(f64, f64)> {
    let k_total = found.len();
    if truth.labels.len() != k_total || mask.n_images() != k_total {
        return Err(RomlError::Dimension(format!(
            "mask covers {} images, ground truth {}, selections {k_total}",
            mask.n_images(),
            truth.labels.len()
        )));
    }
    let n = mask.n_slots();
    let (mut detected, mut correct) = (0usize, 0usize);
    for (k, p) in found.iter().enumerate() {
        if p.n_targets() != n {
            return Err(RomlError::Dimension(format!(
                "selection {k} has {} slots but the mask has {n}",
                p.n_targets()
            )));
        }
        for j in 0..n {
            if mask.detected[j][k] {
                detected += 1;
                if truth.labels[k][p.source(j)].is_some() {
                    correct += 1;
                }
            }
        }
    }
    let total = truth.inlier_count();
    let precision = if detected == 0 { 1.0 } else { correct as f64 / detected as f64 };
    let recall = if total == 0 { 1.0 } else { correct as f64 / total as f64 };
    Ok((precision, recall))
}
