//! Synthetic benchmarks, evaluation metrics and exact small-instance oracles.
//!
//! Every generator draws from `Pcg64`, a permuted congruential generator,
//! seeded with `SeedableRng::seed_from_u64(seed)` and consumed in a fixed,
//! documented order, so a seed reproduces its data bit for bit.

mod coords;
mod metrics;
mod oracle;
mod synthetic;

pub use coords::generate_rank4_coords;
pub use metrics::{
    align_slots, detection_precision_recall, match_identification_ratios, recovery_rate,
};
pub use oracle::{brute_force_miap, miap_search_size, MIAP_MAX_CANDIDATES};
pub use synthetic::{generate, GroundTruth, SyntheticSpec};

/// Trial count used when averaging synthetic experiments.
pub const DEFAULT_TRIALS: usize = 5;
