use thiserror::Error;

/// Errors produced by the solvers, oracles and data generators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RomlError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible assignment: {n_src} sources cannot cover {n_tgt} targets")]
    Infeasible { n_src: usize, n_tgt: usize },

    #[error("instance too large for exhaustive search: {0}")]
    Oversize(String),

    #[error("feature column {column} has zero norm and cannot be normalized")]
    DegenerateFeature { column: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The LSAP reduction is only exact when every feature of an image shares
    /// one l2 norm.
    #[error("image {image} has no common feature norm; normalize features before a descriptor-mode solve")]
    MissingNormalization { image: usize },

    #[error("SVD did not converge after {iterations} sweeps on a {rows}x{cols} matrix")]
    SvdFailure {
        rows: usize,
        cols: usize,
        iterations: usize,
    },

    #[error("non-finite value in {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("generalized eigenproblem has only {available} nonzero eigenvalues, {requested} requested")]
    InsufficientSpectrum { available: usize, requested: usize },

    #[error("point {index} has no affinity to any other point")]
    IsolatedPoint { index: usize },

    /// Wraps a failure of one inner solve inside a model-selection sweep.
    #[error("solve with n = {n} failed: {source}")]
    AtInlierCount {
        n: usize,
        #[source]
        source: Box<RomlError>,
    },
}

pub type Result<T> = std::result::Result<T, RomlError>;
