use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rand_pcg::Pcg64;

use crate::error::{Result, RomlError};
use crate::features::{normalize_features, FeatureSet, PartialPermutation, DEFAULT_NORM_CONSTANT};
use crate::prox::DenseMatrix;

/// Parameters of a synthetic feature-matching instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    /// Number of groups (images).
    pub k: usize,
    /// Inliers shared by all groups.
    pub n: usize,
    /// Features per group, inliers included.
    pub n_k: usize,
    pub d: usize,
    /// Fraction of coordinates per vector hit by a large sparse error.
    pub sparse_error_ratio: f64,
    /// Fraction of inliers per group replaced by extra outliers.
    pub missing_inlier_ratio: f64,
    /// Column norm of the generated features.
    pub norm_constant: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(k: usize, n: usize, n_k: usize, d: usize) -> Self {
        Self {
            k,
            n,
            n_k,
            d,
            sparse_error_ratio: 0.0,
            missing_inlier_ratio: 0.0,
            norm_constant: DEFAULT_NORM_CONSTANT,
            seed: 0,
        }
    }

    pub fn with_sparse_errors(mut self, ratio: f64) -> Self {
        self.sparse_error_ratio = ratio;
        self
    }

    pub fn with_missing(mut self, ratio: f64) -> Self {
        self.missing_inlier_ratio = ratio;
        self
    }

    pub fn with_norm_constant(mut self, c: f64) -> Self {
        self.norm_constant = c;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Corrupted coordinates per vector.
    pub fn corrupted_per_vector(&self) -> usize {
        (self.sparse_error_ratio * self.d as f64 + 1e-9).floor() as usize
    }

    /// Inliers replaced per group.
    pub fn missing_per_group(&self) -> usize {
        (self.missing_inlier_ratio * self.n as f64 + 1e-9).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 || self.d == 0 {
            return Err(RomlError::InvalidInput("K, n and d must be positive".into()));
        }
        if self.n > self.n_k {
            return Err(RomlError::InvalidInput(format!(
                "n = {} exceeds n_k = {}",
                self.n, self.n_k
            )));
        }
        for (name, r) in [
            ("sparse error ratio", self.sparse_error_ratio),
            ("missing inlier ratio", self.missing_inlier_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(RomlError::InvalidInput(format!("{name} {r} is outside [0, 1]")));
            }
        }
        if !(self.norm_constant.is_finite() && self.norm_constant > 0.0) {
            return Err(RomlError::InvalidInput(format!(
                "normalization constant must be positive, got {}",
                self.norm_constant
            )));
        }
        Ok(())
    }
}

/// Known answer for a generated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Slot `j` of image `k` points at where inlier `j` was placed. When that
    /// inlier is missing from the image it points at its replacement outlier.
    pub ppms: Vec<PartialPermutation>,
    /// `labels[k][i]` is the inlier identity of feature `i` in image `k`.
    pub labels: Vec<Vec<Option<usize>>>,
}

impl GroundTruth {
    /// Per-image flags marking genuine inliers.
    pub fn inlier_flags(&self) -> Vec<Vec<bool>> {
        self.labels
            .iter()
            .map(|l| l.iter().map(Option::is_some).collect())
            .collect()
    }

    /// Total number of genuine inliers over all images.
    pub fn inlier_count(&self) -> usize {
        self.labels.iter().flatten().filter(|l| l.is_some()).count()
    }
}

fn gaussian_vector(d: usize, rng: &mut Pcg64) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Adds uniform errors in `[-2 max|f|, 2 max|f|]` to `count` random
/// coordinates. The range is taken from the clean vector.
fn corrupt(f: &mut [f64], count: usize, rng: &mut Pcg64) {
    if count == 0 {
        return;
    }
    let peak = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return;
    }
    let dist = Uniform::new_inclusive(-2.0 * peak, 2.0 * peak).expect("finite range");
    for idx in sample(rng, f.len(), count) {
        f[idx] += dist.sample(rng);
    }
}

/// Draws a synthetic instance.
///
/// Draw order: the `n` shared inliers, then per group: the missing slots, the
/// group's raw vectors (inlier copies or fresh outliers for the missing slots,
/// then `n_k - n` outliers), the sparse errors of each vector in column
/// order, and finally the column shuffle. Vectors are rescaled to l2 norm
/// `norm_constant` last.
pub fn generate(spec: &SyntheticSpec) -> Result<(Vec<FeatureSet>, GroundTruth)> {
    spec.validate()?;
    let mut rng = Pcg64::seed_from_u64(spec.seed);
    let inliers: Vec<Vec<f64>> = (0..spec.n).map(|_| gaussian_vector(spec.d, &mut rng)).collect();
    let corrupted = spec.corrupted_per_vector();

    let mut sets = Vec::with_capacity(spec.k);
    let mut ppms = Vec::with_capacity(spec.k);
    let mut labels = Vec::with_capacity(spec.k);
    for k in 0..spec.k {
        let mut missing = vec![false; spec.n];
        for j in sample(&mut rng, spec.n, spec.missing_per_group()) {
            missing[j] = true;
        }

        let mut columns: Vec<(Vec<f64>, Option<usize>)> = Vec::with_capacity(spec.n_k);
        for (j, &gone) in missing.iter().enumerate() {
            if gone {
                columns.push((gaussian_vector(spec.d, &mut rng), None));
            } else {
                columns.push((inliers[j].clone(), Some(j)));
            }
        }
        for _ in spec.n..spec.n_k {
            columns.push((gaussian_vector(spec.d, &mut rng), None));
        }
        for (f, _) in &mut columns {
            corrupt(f, corrupted, &mut rng);
        }

        let mut order: Vec<usize> = (0..spec.n_k).collect();
        order.shuffle(&mut rng);
        // Column `pos` of the image holds original column `order[pos]`.
        let mut position = vec![0usize; spec.n_k];
        let mut matrix = DenseMatrix::zeros(spec.d, spec.n_k);
        let mut image_labels = vec![None; spec.n_k];
        for (pos, &orig) in order.iter().enumerate() {
            position[orig] = pos;
            matrix.column_mut(pos).copy_from_slice(&columns[orig].0);
            image_labels[pos] = columns[orig].1;
        }

        let raw = FeatureSet::new(matrix, format!("group{k}"))?;
        sets.push(normalize_features(&raw, spec.norm_constant)?);
        ppms.push(PartialPermutation::new(spec.n_k, position[..spec.n].to_vec())?);
        labels.push(image_labels);
    }
    Ok((sets, GroundTruth { ppms, labels }))
}
