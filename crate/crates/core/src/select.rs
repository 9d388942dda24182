//! Model selection on top of the matcher: estimating how many inliers each
//! image holds, and flagging which selected features are genuine inliers.

use crate::error::{Result, RomlError};
use crate::features::FeatureSet;
use crate::prox::{nuclear_norm, DenseMatrix};
use crate::rpca::{solve_rpca, RpcaConfig};
use crate::solver::{solve_roml, RomlConfig, StackingMode};

/// Default relative jump that marks the inlier count.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Default error-block threshold, on the unit-norm scale.
pub const DEFAULT_XI: f64 = 4.0;

/// Nuclear norms of the `d x K` correspondence blocks of a descriptor-mode `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceNuclear {
    pub per_slot: Vec<f64>,
    /// Largest entry of `per_slot`.
    pub gamma_n: f64,
}

/// `per_slot[j] = ||D[j*d .. (j+1)*d, :]||_*`.
pub fn per_correspondence_nuclear(d_mat: &DenseMatrix, d: usize, n: usize) -> Result<CorrespondenceNuclear> {
    if d == 0 || n == 0 || d_mat.nrows() != d * n {
        return Err(RomlError::Dimension(format!(
            "matrix with {} rows cannot hold {n} slots of dimension {d}",
            d_mat.nrows()
        )));
    }
    let per_slot = (0..n)
        .map(|j| nuclear_norm(&d_mat.rows(j * d, d).clone_owned()))
        .collect::<Result<Vec<_>>>()?;
    let gamma_n = per_slot.iter().copied().fold(0.0, f64::max);
    Ok(CorrespondenceNuclear { per_slot, gamma_n })
}

/// Result of the inlier-count search.
#[derive(Debug, Clone, PartialEq)]
pub struct InlierCountEstimate {
    pub n_hat: usize,
    /// `gamma_1, gamma_2, ...` up to the last count solved.
    pub gamma_series: Vec<f64>,
    /// False when no jump was seen up to `n_max`; `n_hat` is then `n_max`.
    pub found: bool,
}

/// Solves the matcher for `n = 1, 2, ...` and returns the first `n` for which
/// `(gamma_{n+1} - mean(gamma_1..gamma_n)) / mean(gamma_1..gamma_n) > delta`.
///
/// Every count is solved from scratch with `base_config` (only `n` changes).
/// `n_max` defaults to the smallest feature count.
pub fn estimate_inlier_count(
    sets: &[FeatureSet],
    base_config: &RomlConfig,
    delta: f64,
    n_max: Option<usize>,
) -> Result<InlierCountEstimate> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(RomlError::Config(format!("delta must be positive, got {delta}")));
    }
    if base_config.mode != StackingMode::Descriptor {
        return Err(RomlError::Config("inlier-count estimation needs descriptor stacking".into()));
    }
    let min_nk = sets.iter().map(FeatureSet::len).min().unwrap_or(0);
    let n_max = n_max.unwrap_or(min_nk);
    if n_max == 0 || n_max > min_nk {
        return Err(RomlError::Config(format!(
            "n_max = {n_max} must lie in 1..={min_nk}"
        )));
    }
    let dim = sets[0].dim();

    let mut gamma_series = Vec::with_capacity(n_max);
    let mut sum = 0.0;
    for n in 1..=n_max {
        let config = RomlConfig {
            n,
            ..base_config.clone()
        };
        let wrap = |e: RomlError| RomlError::AtInlierCount {
            n,
            source: Box::new(e),
        };
        let report = solve_roml(sets, &config).map_err(wrap)?;
        let gamma = per_correspondence_nuclear(&report.d, dim, n).map_err(wrap)?.gamma_n;
        if n > 1 {
            let mean = sum / (n - 1) as f64;
            if mean > 0.0 && (gamma - mean) / mean > delta {
                gamma_series.push(gamma);
                return Ok(InlierCountEstimate {
                    n_hat: n - 1,
                    gamma_series,
                    found: true,
                });
            }
        }
        gamma_series.push(gamma);
        sum += gamma;
    }
    Ok(InlierCountEstimate {
        n_hat: n_max,
        gamma_series,
        found: false,
    })
}

/// Per-feature inlier decisions for the `n x K` selected features.
#[derive(Debug, Clone, PartialEq)]
pub struct InlierMask {
    /// `detected[j][k]` is true when slot `j` of image `k` is judged an inlier.
    pub detected: Vec<Vec<bool>>,
    /// l1 norm of the matching error block.
    pub error_l1: Vec<Vec<f64>>,
    pub xi: f64,
    /// Whether the decomposition behind `error_l1` met its tolerance.
    pub converged: bool,
}

impl InlierMask {
    /// Thresholds error-block norms: `detected = error_l1 < xi`.
    pub fn from_errors(error_l1: Vec<Vec<f64>>, xi: f64) -> Self {
        let detected = error_l1
            .iter()
            .map(|row| row.iter().map(|&v| v < xi).collect())
            .collect();
        Self {
            detected,
            error_l1,
            xi,
            converged: true,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.detected.len()
    }

    pub fn n_images(&self) -> usize {
        self.detected.first().map_or(0, Vec::len)
    }

    pub fn detected_count(&self) -> usize {
        self.detected.iter().flatten().filter(|&&b| b).count()
    }
}

/// Decomposes a descriptor-mode `D` with `lambda = 1/sqrt(dn)` and marks a
/// selected feature as an inlier when the l1 norm of its error block is below
/// `xi`.
///
/// `xi` is on the unit-norm scale: `D` is first divided by the mean l2 norm of
/// its `d`-blocks, so features normalized to any constant are handled alike.
pub fn detect_true_inliers(d_mat: &DenseMatrix, d: usize, n: usize, xi: f64) -> Result<InlierMask> {
    if d == 0 || n == 0 || d_mat.nrows() != d * n {
        return Err(RomlError::Dimension(format!(
            "matrix with {} rows cannot hold {n} slots of dimension {d}",
            d_mat.nrows()
        )));
    }
    if !(xi.is_finite() && xi > 0.0) {
        return Err(RomlError::Config(format!("threshold must be positive, got {xi}")));
    }
    let k_total = d_mat.ncols();
    let scale = (0..n)
        .flat_map(|j| (0..k_total).map(move |k| (j, k)))
        .map(|(j, k)| d_mat.view((j * d, k), (d, 1)).norm())
        .sum::<f64>()
        / (n * k_total).max(1) as f64;
    let unit = if scale > 0.0 { d_mat / scale } else { d_mat.clone() };
    let rpca = solve_rpca(&unit, &RpcaConfig::with_lambda(1.0 / ((d * n) as f64).sqrt()))?;
    let error_l1 = (0..n)
        .map(|j| {
            (0..k_total)
                .map(|k| rpca.e.view((j * d, k), (d, 1)).iter().map(|v| v.abs()).sum())
                .collect()
        })
        .collect();
    let mut mask = InlierMask::from_errors(error_l1, xi);
    mask.converged = rpca.converged;
    Ok(mask)
}
