//! Principal component pursuit: split a fixed matrix into low-rank plus sparse
//! parts,
//!
//! ```text
//! min ||L||_* + lambda ||E||_1   s.t.   D = L + E
//! ```
//!
//! solved with the inexact augmented Lagrangian method.

use crate::error::{Result, RomlError};
use crate::prox::{ensure_finite, l1_norm, nuclear_norm, shrink, svt, DenseMatrix};
use crate::solver::RHO_MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct RpcaConfig {
    /// `None` picks `1/sqrt(max(rows, cols))`.
    pub lambda: Option<f64>,
    pub rho0: f64,
    pub rho_factor: f64,
    pub max_iters: usize,
    /// Stop once `||D - L - E||_F / ||D||_F` drops below this.
    pub tol: f64,
}

impl Default for RpcaConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            rho0: 1e-4,
            rho_factor: 1.05,
            max_iters: 5000,
            tol: 1e-7,
        }
    }
}

impl RpcaConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda: Some(lambda),
            ..Self::default()
        }
    }

    pub fn resolved_lambda(&self, rows: usize, cols: usize) -> f64 {
        self.lambda
            .unwrap_or_else(|| 1.0 / (rows.max(cols).max(1) as f64).sqrt())
    }

    fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(RomlError::Config(format!("lambda must be positive, got {l}")));
            }
        }
        if !(self.rho0.is_finite() && self.rho0 > 0.0) {
            return Err(RomlError::Config(format!("rho0 must be positive, got {}", self.rho0)));
        }
        if !(self.rho_factor.is_finite() && self.rho_factor >= 1.0) {
            return Err(RomlError::Config(format!(
                "rho factor must be at least 1, got {}",
                self.rho_factor
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(RomlError::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcaResult {
    pub l: DenseMatrix,
    pub e: DenseMatrix,
    pub iterations: usize,
    /// False when `max_iters` ran out before the tolerance was met; `l` and `e`
    /// then hold the last iterate.
    pub converged: bool,
    pub lambda: f64,
}

impl RpcaResult {
    /// `||L||_* + lambda ||E||_1`.
    pub fn objective(&self) -> Result<f64> {
        Ok(nuclear_norm(&self.l)? + self.lambda * l1_norm(&self.e))
    }
}

pub fn solve_rpca(d: &DenseMatrix, config: &RpcaConfig) -> Result<RpcaResult> {
    config.validate()?;
    ensure_finite(d, "RPCA input")?;
    let (rows, cols) = d.shape();
    let lambda = config.resolved_lambda(rows, cols);
    let d_norm = d.norm();
    let mut l = DenseMatrix::zeros(rows, cols);
    let mut e = DenseMatrix::zeros(rows, cols);
    if d_norm == 0.0 {
        return Ok(RpcaResult {
            l,
            e,
            iterations: 0,
            converged: true,
            lambda,
        });
    }

    let mut y = DenseMatrix::zeros(rows, cols);
    let mut rho = config.rho0;
    for t in 0..config.max_iters {
        let inv = 1.0 / rho;
        l = svt(&(d - &e - &y * inv), inv)?.0;
        e = d - &l - &y * inv;
        e.apply(|v| *v = shrink(*v, lambda * inv));
        let residual = &l + &e - d;
        y += &residual * rho;
        rho = (rho * config.rho_factor).min(RHO_MAX);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(RomlError::NonFinite {
                what: "RPCA multiplier",
                iteration: t,
            });
        }
        if residual.norm() / d_norm < config.tol {
            return Ok(RpcaResult {
                l,
                e,
                iterations: t + 1,
                converged: true,
                lambda,
            });
        }
    }
    Ok(RpcaResult {
        l,
        e,
        iterations: config.max_iters,
        converged: false,
        lambda,
    })
}
