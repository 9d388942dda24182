//! Proximal operators for the l1 and nuclear norms, plus the matrix norms the
//! solvers report.
//!
//! All matrices are `nalgebra::DMatrix<f64>`, stored column-major.

use nalgebra::{DMatrix, SVD};

use crate::error::{Result, RomlError};

/// Dense real matrix, column-major.
pub type DenseMatrix = DMatrix<f64>;

/// Singular values at or below this are treated as zero when counting rank.
pub const RANK_EPS: f64 = 1e-12;

const SVD_MAX_SWEEPS: usize = 10_000;

pub(crate) fn ensure_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    match m.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(idx) => {
            let (r, c) = (idx % m.nrows(), idx / m.nrows());
            Err(RomlError::InvalidInput(format!(
                "{what} has a non-finite entry at ({r}, {c})"
            )))
        }
    }
}

fn ensure_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(RomlError::InvalidInput(format!(
            "threshold must be finite and nonnegative, got {tau}"
        )))
    }
}

#[inline]
pub(crate) fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Element-wise `sign(x) * max(|x| - tau, 0)`.
pub fn soft_threshold(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    ensure_tau(tau)?;
    ensure_finite(m, "soft_threshold input")?;
    Ok(m.map(|x| shrink(x, tau)))
}

/// Thin SVD with failure reported as an error instead of a panic.
pub fn thin_svd(m: &DenseMatrix) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(RomlError::Dimension("SVD of an empty matrix".into()));
    }
    SVD::try_new(m.clone(), true, true, f64::EPSILON, SVD_MAX_SWEEPS).ok_or(
        RomlError::SvdFailure {
            rows: m.nrows(),
            cols: m.ncols(),
            iterations: SVD_MAX_SWEEPS,
        },
    )
}

/// Singular values of `m`, sorted in descending order.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    ensure_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, SVD_MAX_SWEEPS).ok_or(
        RomlError::SvdFailure {
            rows: m.nrows(),
            cols: m.ncols(),
            iterations: SVD_MAX_SWEEPS,
        },
    )?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Singular value thresholding: the proximal map of `tau * ||.||_*`.
///
/// Returns `U * shrink(S, tau) * V^T` together with the number of singular
/// values strictly above `tau` (and above [`RANK_EPS`]).
pub fn svt(m: &DenseMatrix, tau: f64) -> Result<(DenseMatrix, usize)> {
    let (l, rank, _) = svt_with_norm(m, tau)?;
    Ok((l, rank))
}

/// [`svt`] that also returns the nuclear norm of the result.
pub(crate) fn svt_with_norm(m: &DenseMatrix, tau: f64) -> Result<(DenseMatrix, usize, f64)> {
    ensure_tau(tau)?;
    ensure_finite(m, "svt input")?;
    let (rows, cols) = m.shape();
    if m.is_empty() || m.iter().all(|&v| v == 0.0) {
        return Ok((DenseMatrix::zeros(rows, cols), 0, 0.0));
    }
    let svd = thin_svd(m)?;
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");

    let cutoff = tau.max(RANK_EPS);
    let mut out = DenseMatrix::zeros(rows, cols);
    let mut rank = 0;
    let mut norm = 0.0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
        }
        let shrunk = s - tau;
        if shrunk > 0.0 {
            norm += shrunk;
            out.ger(shrunk, &u.column(i), &v_t.row(i).transpose(), 1.0);
        }
    }
    Ok((out, rank, norm))
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Largest singular value.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

/// Entry-wise l1 norm.
pub fn l1_norm(m: &DenseMatrix) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}
