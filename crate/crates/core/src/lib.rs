//! Robust joint selection and matching of inlier features across images.
//!
//! Each image contributes a set of feature vectors, only some of which belong
//! to the common object. [`solver::solve_roml`] picks `n` features per image
//! and their correspondences by splitting the stacked selections into a
//! low-rank and a sparse part. Around it sit the building blocks
//! ([`prox`], [`lsap`]), model selection ([`select`], [`rpca`]), a feature
//! learner ([`embed`]) and synthetic benchmarks ([`bench`]).

pub mod bench;
pub mod embed;
pub mod error;
pub mod features;
pub mod lsap;
pub mod prox;
pub mod rpca;
pub mod select;
pub mod solver;

pub use error::{Result, RomlError};
pub use features::{FeatureSet, PartialPermutation};
pub use solver::{solve_roml, MatchReport, RomlConfig, StackingMode};
