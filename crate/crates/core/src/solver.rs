//! ADMM solver for joint inlier selection and matching.
//!
//! Given `K` feature sets, the solver looks for one partial permutation per
//! image such that the stacked selections `D` split into a low-rank part `L`
//! and a sparse part `E`:
//!
//! ```text
//! min ||L||_* + lambda ||E||_1   s.t.   D({P^k}) = L + E,   P^k partial permutations
//! ```
//!
//! Each iteration updates `L` by singular value thresholding, `E` by soft
//! thresholding, every `P^k` by an exact linear assignment, and finally the
//! multiplier `Y`. The penalty `rho` grows geometrically.
//!
//! Two stackings are supported. In descriptor mode `D` is `dn x K` with column
//! `k` equal to `vec(F^k P^k)`, so target slot `j` occupies rows
//! `j*d .. (j+1)*d`. In coordinate mode `D` is `dK x n` with rows
//! `k*d .. (k+1)*d` equal to `F^k P^k`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_pcg::Pcg64;
use rayon::prelude::*;

use crate::error::{Result, RomlError};
use crate::features::{FeatureSet, PartialPermutation};
use crate::lsap::{solve_lsap, AssignmentProblem};
use crate::prox::{l1_norm, shrink, svt_with_norm, DenseMatrix, RANK_EPS};

/// Upper bound on the penalty parameter.
pub const RHO_MAX: f64 = 1e10;

/// How selected features are stacked into the data matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StackingMode {
    /// `D` is `dn x K`, one vectorized selection per image.
    Descriptor,
    /// `D` is `dK x n`, one coordinate block per image (point tracks as columns).
    Coordinate,
}

/// Keeps the first image's selection fixed and emphasizes its features.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracking {
    pub fixed_first: PartialPermutation,
    /// First-image features are scaled by this factor relative to the rest.
    pub emphasis_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomlConfig {
    /// Number of inliers to select per image.
    pub n: usize,
    /// Sparsity weight. `None` picks `5/sqrt(dn)` (descriptor) or `5/sqrt(dK)`
    /// (coordinate).
    pub lambda: Option<f64>,
    pub rho0: f64,
    pub rho_factor: f64,
    pub max_iters: usize,
    /// Stop once `||L + E - D||_F / ||D||_F` drops below this...
    pub primal_tol: f64,
    /// ...and the selections have not changed for this many iterations.
    pub stable_iters: usize,
    pub mode: StackingMode,
    pub seed: u64,
    pub tracking: Option<Tracking>,
    /// Worker threads for the per-image assignment subproblems.
    pub threads: usize,
}

impl RomlConfig {
    pub fn descriptor(n: usize) -> Self {
        Self {
            n,
            lambda: None,
            rho0: 1e-4,
            rho_factor: 1.001,
            max_iters: 5000,
            primal_tol: 1e-7,
            stable_iters: 50,
            mode: StackingMode::Descriptor,
            seed: 0,
            tracking: None,
            threads: 1,
        }
    }

    pub fn coordinate(n: usize) -> Self {
        Self {
            rho0: 1e-6,
            rho_factor: 1.0001,
            mode: StackingMode::Coordinate,
            ..Self::descriptor(n)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The sparsity weight used for `K` images of dimension `d`.
    pub fn resolved_lambda(&self, d: usize, k: usize) -> f64 {
        self.lambda.unwrap_or_else(|| match self.mode {
            StackingMode::Descriptor => 5.0 / ((d * self.n) as f64).sqrt(),
            StackingMode::Coordinate => 5.0 / ((d * k) as f64).sqrt(),
        })
    }

    fn validate(&self, sets: &[FeatureSet]) -> Result<()> {
        if sets.len() < 2 {
            return Err(RomlError::Config(format!(
                "need at least two feature sets, got {}",
                sets.len()
            )));
        }
        if self.n == 0 {
            return Err(RomlError::Config("inlier count n must be at least 1".into()));
        }
        let min_nk = sets.iter().map(FeatureSet::len).min().unwrap_or(0);
        if self.n > min_nk {
            return Err(RomlError::Config(format!(
                "n = {} exceeds the smallest feature count {min_nk}",
                self.n
            )));
        }
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
        if let Some(t) = &self.tracking {
            if t.fixed_first.n_sources() != sets[0].len() || t.fixed_first.n_targets() != self.n {
                return Err(RomlError::Config(format!(
                    "fixed first selection is {}x{}, expected {}x{}",
                    t.fixed_first.n_sources(),
                    t.fixed_first.n_targets(),
                    sets[0].len(),
                    self.n
                )));
            }
            if !(t.emphasis_factor.is_finite() && t.emphasis_factor > 0.0) {
                return Err(RomlError::Config(format!(
                    "emphasis factor must be positive, got {}",
                    t.emphasis_factor
                )));
            }
        }
        Ok(())
    }
}

/// Iterates of the ADMM loop. All four matrices share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub l: DenseMatrix,
    pub e: DenseMatrix,
    pub y: DenseMatrix,
    pub d: DenseMatrix,
    /// Penalty used by the next update.
    pub rho: f64,
    pub iteration: usize,
    pub ppms: Vec<PartialPermutation>,
}

impl SolverState {
    /// Zero `L`, `E`, `Y` with `D` assembled from `ppms`.
    pub fn new(
        sets: &[FeatureSet],
        ppms: Vec<PartialPermutation>,
        mode: StackingMode,
        rho: f64,
    ) -> Result<Self> {
        let d = assemble_d(sets, &ppms, mode)?;
        let (r, c) = d.shape();
        Ok(Self {
            l: DenseMatrix::zeros(r, c),
            e: DenseMatrix::zeros(r, c),
            y: DenseMatrix::zeros(r, c),
            d,
            rho,
            iteration: 0,
            ppms,
        })
    }
}

/// Frobenius norms of the primal and dual residuals of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual_l: f64,
    pub dual_e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    /// Canonicalized selections, one per image.
    pub ppms: Vec<PartialPermutation>,
    pub l: DenseMatrix,
    pub e: DenseMatrix,
    pub d: DenseMatrix,
    pub lambda: f64,
    pub residual_history: Vec<Residuals>,
    /// `||L||_* + lambda ||E||_1` after each iteration.
    pub objective_history: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl MatchReport {
    /// Final `||L + E - D||_F / ||D||_F`.
    pub fn relative_primal(&self) -> f64 {
        let dn = self.d.norm();
        let p = self.residual_history.last().map_or(0.0, |r| r.primal);
        if dn > 0.0 {
            p / dn
        } else {
            p
        }
    }
}

fn check_dims(sets: &[FeatureSet], ppms: &[PartialPermutation]) -> Result<(usize, usize)> {
    if sets.is_empty() {
        return Err(RomlError::Dimension("no feature sets".into()));
    }
    if sets.len() != ppms.len() {
        return Err(RomlError::Dimension(format!(
            "{} feature sets but {} selections",
            sets.len(),
            ppms.len()
        )));
    }
    let dim = sets[0].dim();
    let n = ppms[0].n_targets();
    for (k, (fs, p)) in sets.iter().zip(ppms).enumerate() {
        if fs.dim() != dim {
            return Err(RomlError::Dimension(format!(
                "image {k} has feature dimension {} but image 0 has {dim}",
                fs.dim()
            )));
        }
        if p.n_sources() != fs.len() {
            return Err(RomlError::Dimension(format!(
                "selection for image {k} covers {} sources but the image has {} features",
                p.n_sources(),
                fs.len()
            )));
        }
        if p.n_targets() != n {
            return Err(RomlError::Dimension(format!(
                "selection for image {k} has {} slots, expected {n}",
                p.n_targets()
            )));
        }
    }
    Ok((dim, n))
}

/// Stacks the selected features of every image into the data matrix.
pub fn assemble_d(
    sets: &[FeatureSet],
    ppms: &[PartialPermutation],
    mode: StackingMode,
) -> Result<DenseMatrix> {
    let (dim, n) = check_dims(sets, ppms)?;
    let k_total = sets.len();
    let out = match mode {
        StackingMode::Descriptor => {
            let mut out = DenseMatrix::zeros(dim * n, k_total);
            for (k, (fs, p)) in sets.iter().zip(ppms).enumerate() {
                for (j, &src) in p.target_to_source().iter().enumerate() {
                    out.view_mut((j * dim, k), (dim, 1))
                        .copy_from(&fs.features().column(src));
                }
            }
            out
        }
        StackingMode::Coordinate => {
            let mut out = DenseMatrix::zeros(dim * k_total, n);
            for (k, (fs, p)) in sets.iter().zip(ppms).enumerate() {
                for (j, &src) in p.target_to_source().iter().enumerate() {
                    out.view_mut((k * dim, j), (dim, 1))
                        .copy_from(&fs.features().column(src));
                }
            }
            out
        }
    };
    Ok(out)
}

/// Low-rank step: `svt(D - E - Y/rho, 1/rho)`.
pub fn update_l(state: &SolverState) -> Result<DenseMatrix> {
    Ok(update_l_with_norm(state)?.0)
}

/// Also returns `||L||_*`, read off the thresholded spectrum.
fn update_l_with_norm(state: &SolverState) -> Result<(DenseMatrix, f64)> {
    check_rho(state.rho)?;
    let inv = 1.0 / state.rho;
    let target = &state.d - &state.e - &state.y * inv;
    let (l, _, norm) = svt_with_norm(&target, inv)?;
    Ok((l, norm))
}

/// Sparse step: element-wise `shrink(D - L - Y/rho, lambda/rho)`, using the
/// `L` already stored in `state`.
pub fn update_e(state: &SolverState, lambda: f64) -> Result<DenseMatrix> {
    check_rho(state.rho)?;
    let inv = 1.0 / state.rho;
    let tau = lambda * inv;
    let mut out = &state.d - &state.l - &state.y * inv;
    out.apply(|v| *v = shrink(*v, tau));
    Ok(out)
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(RomlError::InvalidInput(format!("rho must be positive, got {rho}")))
    }
}

/// Cost matrix (`n_k x n`) of the assignment subproblem for image `k`.
///
/// With `V = Y + rho (L + E)` and `v_j` the part of `V` that slot `j` of image
/// `k` is compared with, the descriptor-mode cost is `-<v_j, f_i>`. For
/// normalized features the quadratic part of the subproblem is the same for
/// every feasible selection, so this linear cost is exact. Coordinate mode adds
/// the per-feature term `rho/2 ||f_i||^2`, which keeps the assignment exact
/// without requiring equal norms.
pub fn build_ppm_cost(
    k: usize,
    state: &SolverState,
    fs: &FeatureSet,
    mode: StackingMode,
) -> Result<DenseMatrix> {
    let f = fs.features();
    let dim = fs.dim();
    let n = state.ppms.first().map_or(0, PartialPermutation::n_targets);
    let (rows, cols) = state.d.shape();
    let expected = match mode {
        StackingMode::Descriptor => (dim * n, state.ppms.len()),
        StackingMode::Coordinate => (dim * state.ppms.len(), n),
    };
    if (rows, cols) != expected || k >= state.ppms.len() {
        return Err(RomlError::Dimension(format!(
            "state of shape {rows}x{cols} does not match image {k} with d = {dim}, n = {n}"
        )));
    }

    // v_j for every slot, as the columns of a d x n matrix.
    let mut targets = DenseMatrix::zeros(dim, n);
    for j in 0..n {
        for r in 0..dim {
            let (row, col) = match mode {
                StackingMode::Descriptor => (j * dim + r, k),
                StackingMode::Coordinate => (k * dim + r, j),
            };
            targets[(r, j)] =
                state.y[(row, col)] + state.rho * (state.l[(row, col)] + state.e[(row, col)]);
        }
    }
    let mut cost = -(f.transpose() * targets);
    if mode == StackingMode::Coordinate {
        for (i, col) in f.column_iter().enumerate() {
            let q = 0.5 * state.rho * col.norm_squared();
            cost.row_mut(i).add_scalar_mut(q);
        }
    }
    Ok(cost)
}

fn solve_one(
    k: usize,
    state: &SolverState,
    fs: &FeatureSet,
    config: &RomlConfig,
) -> Result<PartialPermutation> {
    if k == 0 {
        if let Some(t) = &config.tracking {
            return Ok(t.fixed_first.clone());
        }
    }
    if config.mode == StackingMode::Descriptor
        && fs.len() > config.n
        && fs.norm_constant().is_none()
    {
        return Err(RomlError::MissingNormalization { image: k });
    }
    let cost = build_ppm_cost(k, state, fs, config.mode)?;
    let (assignment, _) = solve_lsap(&AssignmentProblem::new(cost)?);
    PartialPermutation::from_assignment(fs.len(), assignment)
}

/// Solves the `K` independent assignment subproblems.
pub fn update_ppms(
    state: &SolverState,
    sets: &[FeatureSet],
    config: &RomlConfig,
) -> Result<Vec<PartialPermutation>> {
    if sets.len() != state.ppms.len() {
        return Err(RomlError::Dimension(format!(
            "{} feature sets but {} selections in the state",
            sets.len(),
            state.ppms.len()
        )));
    }
    if config.threads > 1 {
        sets.par_iter()
            .enumerate()
            .map(|(k, fs)| solve_one(k, state, fs, config))
            .collect()
    } else {
        sets.iter()
            .enumerate()
            .map(|(k, fs)| solve_one(k, state, fs, config))
            .collect()
    }
}

/// Multiplier step `Y + rho (L + E - D)`; `state.d` must already reflect the
/// new selections.
pub fn update_y(state: &SolverState) -> DenseMatrix {
    let mut y = state.y.clone();
    y += (&state.l + &state.e - &state.d) * state.rho;
    y
}

/// Residual norms between consecutive iterates, using the penalty `prev.rho`
/// that produced `curr`.
pub fn residuals(prev: &SolverState, curr: &SolverState) -> Result<Residuals> {
    let shape = curr.d.shape();
    if prev.d.shape() != shape || prev.e.shape() != shape || curr.l.shape() != shape {
        return Err(RomlError::Dimension("solver states differ in shape".into()));
    }
    let primal = (&curr.l + &curr.e - &curr.d).norm();
    let dual_l = (&prev.e + &prev.d - &curr.e - &curr.d).norm() * prev.rho;
    let dual_e = (&prev.d - &curr.d).norm() * prev.rho;
    Ok(Residuals {
        primal,
        dual_l,
        dual_e,
    })
}

/// Reorders the slots of all selections by one common permutation so that the
/// first image's source indices ascend. Returns the new selections and the
/// permutation applied (new slot `j` is old slot `order[j]`).
pub fn canonical_order(ppms: &[PartialPermutation]) -> Vec<usize> {
    let Some(first) = ppms.first() else {
        return Vec::new();
    };
    let mut order: Vec<usize> = (0..first.n_targets()).collect();
    order.sort_by_key(|&j| first.source(j));
    order
}

pub fn canonicalize(ppms: &[PartialPermutation]) -> Vec<PartialPermutation> {
    let order = canonical_order(ppms);
    ppms.iter().map(|p| p.reorder_slots(&order)).collect()
}

fn reorder_matrix_slots(m: &DenseMatrix, order: &[usize], dim: usize, mode: StackingMode) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m.nrows(), m.ncols());
    for (new_j, &old_j) in order.iter().enumerate() {
        match mode {
            StackingMode::Descriptor => out
                .rows_mut(new_j * dim, dim)
                .copy_from(&m.rows(old_j * dim, dim)),
            StackingMode::Coordinate => out.column_mut(new_j).copy_from(&m.column(old_j)),
        }
    }
    out
}

/// Uniformly random injection per image, drawn from `seed`.
pub fn random_ppms(sets: &[FeatureSet], n: usize, seed: u64) -> Result<Vec<PartialPermutation>> {
    let mut rng = Pcg64::seed_from_u64(seed);
    sets.iter()
        .map(|fs| {
            if n > fs.len() {
                return Err(RomlError::Config(format!(
                    "n = {n} exceeds the {} features of image '{}'",
                    fs.len(),
                    fs.image_id()
                )));
            }
            PartialPermutation::new(fs.len(), sample(&mut rng, fs.len(), n).into_vec())
        })
        .collect()
}

fn ensure_finite_state(m: &DenseMatrix, what: &'static str, iteration: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RomlError::NonFinite { what, iteration })
    }
}

/// Runs the full ADMM loop.
pub fn solve_roml(sets: &[FeatureSet], config: &RomlConfig) -> Result<MatchReport> {
    config.validate(sets)?;
    if config.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| RomlError::Config(format!("cannot start worker threads: {e}")))?;
        pool.install(|| run(sets, config))
    } else {
        run(sets, config)
    }
}

/// Subtracts from every coordinate set the mean of all its points.
pub fn center_coordinates(sets: &[FeatureSet]) -> Result<Vec<FeatureSet>> {
    sets.iter()
        .map(|fs| {
            let mut f = fs.features().clone();
            let mean = f.column_mean();
            for mut col in f.column_iter_mut() {
                col -= &mean;
            }
            FeatureSet::new(f, fs.image_id())
        })
        .collect()
}

fn run(sets: &[FeatureSet], config: &RomlConfig) -> Result<MatchReport> {
    let centered;
    let sets = if config.mode == StackingMode::Coordinate {
        centered = center_coordinates(sets)?;
        &centered[..]
    } else {
        sets
    };
    let emphasized;
    let sets = match &config.tracking {
        Some(t) if t.emphasis_factor != 1.0 => {
            let first = &sets[0];
            let scaled = first.features() * t.emphasis_factor;
            let fs = match first.norm_constant() {
                Some(c) => {
                    FeatureSet::with_norm_constant(scaled, first.image_id(), c * t.emphasis_factor)?
                }
                None => FeatureSet::new(scaled, first.image_id())?,
            };
            emphasized = std::iter::once(fs).chain(sets[1..].iter().cloned()).collect::<Vec<_>>();
            &emphasized[..]
        }
        _ => sets,
    };

    let dim = sets[0].dim();
    let lambda = config.resolved_lambda(dim, sets.len());
    let mut ppms = random_ppms(sets, config.n, config.seed)?;
    if let Some(t) = &config.tracking {
        ppms[0] = t.fixed_first.clone();
    }
    let mut state = SolverState::new(sets, ppms, config.mode, config.rho0)?;

    let mut residual_history = Vec::new();
    let mut objective_history = Vec::new();
    let mut stable = 0usize;
    let mut converged = false;

    for t in 0..config.max_iters {
        let (l, l_nuclear) = update_l_with_norm(&state)?;
        ensure_finite_state(&l, "L", t)?;
        let mut next = SolverState {
            l,
            e: DenseMatrix::zeros(0, 0),
            y: state.y.clone(),
            d: state.d.clone(),
            rho: state.rho,
            iteration: t + 1,
            ppms: state.ppms.clone(),
        };
        next.e = update_e(&next, lambda)?;
        ensure_finite_state(&next.e, "E", t)?;

        next.ppms = update_ppms(&next, sets, config)?;
        next.d = assemble_d(sets, &next.ppms, config.mode)?;
        next.y = update_y(&next);
        ensure_finite_state(&next.y, "Y", t)?;

        let res = residuals(&state, &next)?;
        residual_history.push(res);
        objective_history.push(l_nuclear + lambda * l1_norm(&next.e));

        if next.ppms == state.ppms {
            stable += 1;
        } else {
            stable = 0;
        }
        next.rho = (state.rho * config.rho_factor).min(RHO_MAX);
        state = next;

        let d_norm = state.d.norm();
        let rel = if d_norm > RANK_EPS { res.primal / d_norm } else { res.primal };
        if rel < config.primal_tol && stable >= config.stable_iters {
            converged = true;
            break;
        }
    }

    let order = canonical_order(&state.ppms);
    let ppms = canonicalize(&state.ppms);
    Ok(MatchReport {
        l: reorder_matrix_slots(&state.l, &order, dim, config.mode),
        e: reorder_matrix_slots(&state.e, &order, dim, config.mode),
        d: reorder_matrix_slots(&state.d, &order, dim, config.mode),
        ppms,
        lambda,
        iterations_used: residual_history.len(),
        residual_history,
        objective_history,
        converged,
    })
}
