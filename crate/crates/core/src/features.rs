//! Per-image feature matrices and partial permutations over them.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, RomlError};
use crate::lsap::Assignment;
use crate::prox::{ensure_finite, DenseMatrix};

/// Tolerance for checking that every column carries the declared norm.
pub const NORM_TOL: f64 = 1e-9;

/// Column norm used for descriptor features when none is given. The solver's
/// default penalty schedule is calibrated for features of this magnitude.
pub const DEFAULT_NORM_CONSTANT: f64 = 100.0;

/// Weight of the aspect-ratio entry appended to box descriptors.
pub const DEFAULT_KAPPA_R: f64 = 0.08;
/// Weight of the objectness-driven perturbation added to box descriptors.
pub const DEFAULT_KAPPA_N: f64 = 0.015;

/// Features extracted from one image, one column per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: DenseMatrix,
    image_id: String,
    norm_constant: Option<f64>,
}

impl FeatureSet {
    pub fn new(features: DenseMatrix, image_id: impl Into<String>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(RomlError::Dimension(format!(
                "feature matrix must be at least 1x1, got {}x{}",
                features.nrows(),
                features.ncols()
            )));
        }
        ensure_finite(&features, "feature matrix")?;
        Ok(Self {
            features,
            image_id: image_id.into(),
            norm_constant: None,
        })
    }

    /// Builds a set whose columns already share the norm `c`. Fails if any
    /// column deviates from `c` by more than [`NORM_TOL`].
    pub fn with_norm_constant(
        features: DenseMatrix,
        image_id: impl Into<String>,
        c: f64,
    ) -> Result<Self> {
        let mut fs = Self::new(features, image_id)?;
        for (idx, col) in fs.features.column_iter().enumerate() {
            if (col.norm() - c).abs() > NORM_TOL * c.max(1.0) {
                return Err(RomlError::InvalidInput(format!(
                    "column {idx} of image '{}' has norm {} instead of {c}",
                    fs.image_id,
                    col.norm()
                )));
            }
        }
        fs.norm_constant = Some(c);
        Ok(fs)
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn norm_constant(&self) -> Option<f64> {
        self.norm_constant
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    /// Number of features `n_k`.
    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.features.ncols() == 0
    }

    /// Returns a copy with columns permuted so that new column `i` is old
    /// column `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let pp = PartialPermutation::new(self.len(), order.to_vec())?;
        if order.len() != self.len() {
            return Err(RomlError::Dimension(format!(
                "permutation of length {} for {} features",
                order.len(),
                self.len()
            )));
        }
        Ok(Self {
            features: self.features.select_columns(pp.target_to_source()),
            image_id: self.image_id.clone(),
            norm_constant: self.norm_constant,
        })
    }
}

/// Rescales every column of `fs` to l2 norm `c`.
pub fn normalize_features(fs: &FeatureSet, c: f64) -> Result<FeatureSet> {
    if !(c.is_finite() && c > 0.0) {
        return Err(RomlError::InvalidInput(format!(
            "normalization constant must be positive, got {c}"
        )));
    }
    let mut features = fs.features.clone();
    for (idx, mut col) in features.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(RomlError::DegenerateFeature { column: idx });
        }
        col *= c / norm;
    }
    Ok(FeatureSet {
        features,
        image_id: fs.image_id.clone(),
        norm_constant: Some(c),
    })
}

/// Normalizes the first image to `factor * c` and all others to `c`.
///
/// Used with a fixed first-image selection so the labelled frame dominates
/// the low-rank pattern.
pub fn emphasize_first(sets: &[FeatureSet], c: f64, factor: f64) -> Result<Vec<FeatureSet>> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(RomlError::InvalidInput(format!(
            "emphasis factor must be positive, got {factor}"
        )));
    }
    sets.iter()
        .enumerate()
        .map(|(k, fs)| normalize_features(fs, if k == 0 { factor * c } else { c }))
        .collect()
}

/// Appends `kappa_r * aspect` to each box descriptor and perturbs the result
/// with Gaussian noise of standard deviation `1 - objectness`, weighted by
/// `kappa_n`.
pub fn augment_box_features<R: Rng + ?Sized>(
    fs: &FeatureSet,
    aspect_ratios: &[f64],
    objectness: &[f64],
    kappa_r: f64,
    kappa_n: f64,
    rng: &mut R,
) -> Result<FeatureSet> {
    let n = fs.len();
    if aspect_ratios.len() != n || objectness.len() != n {
        return Err(RomlError::Dimension(format!(
            "image '{}' has {n} boxes but {} aspect ratios and {} objectness scores",
            fs.image_id,
            aspect_ratios.len(),
            objectness.len()
        )));
    }
    let d = fs.dim();
    let mut out = DenseMatrix::zeros(d + 1, n);
    for i in 0..n {
        let sd = 1.0 - objectness[i];
        if !(0.0..=1.0).contains(&objectness[i]) {
            return Err(RomlError::InvalidInput(format!(
                "objectness score {} of box {i} is outside [0, 1]",
                objectness[i]
            )));
        }
        let noise = Normal::new(0.0, sd).map_err(|e| RomlError::InvalidInput(e.to_string()))?;
        for r in 0..d {
            out[(r, i)] = fs.features[(r, i)] + kappa_n * noise.sample(rng);
        }
        out[(d, i)] = kappa_r * aspect_ratios[i] + kappa_n * noise.sample(rng);
    }
    FeatureSet::new(out, fs.image_id.clone())
}

/// Partial permutation matrix `P` of shape `n_sources x n_targets`, stored as
/// the source index selected for each target slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartialPermutation {
    n_sources: usize,
    target_to_source: Vec<usize>,
}

impl PartialPermutation {
    pub fn new(n_sources: usize, target_to_source: Vec<usize>) -> Result<Self> {
        if target_to_source.len() > n_sources {
            return Err(RomlError::Infeasible {
                n_src: n_sources,
                n_tgt: target_to_source.len(),
            });
        }
        let a = Assignment {
            target_to_source,
        };
        if !a.is_injective(n_sources) {
            return Err(RomlError::InvalidInput(format!(
                "selection {:?} is not an injection into {n_sources} sources",
                a.target_to_source
            )));
        }
        Ok(Self {
            n_sources,
            target_to_source: a.target_to_source,
        })
    }

    /// Selects sources `0..n_targets` in order.
    pub fn identity(n_sources: usize, n_targets: usize) -> Result<Self> {
        Self::new(n_sources, (0..n_targets).collect())
    }

    pub fn from_assignment(n_sources: usize, a: Assignment) -> Result<Self> {
        Self::new(n_sources, a.target_to_source)
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn n_targets(&self) -> usize {
        self.target_to_source.len()
    }

    pub fn target_to_source(&self) -> &[usize] {
        &self.target_to_source
    }

    pub fn source(&self, target: usize) -> usize {
        self.target_to_source[target]
    }

    /// Binary `n_sources x n_targets` matrix.
    pub fn to_matrix(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_sources, self.n_targets());
        for (j, &i) in self.target_to_source.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }

    /// Reorders target slots: new slot `j` takes old slot `order[j]`.
    pub fn reorder_slots(&self, order: &[usize]) -> Self {
        Self {
            n_sources: self.n_sources,
            target_to_source: order.iter().map(|&j| self.target_to_source[j]).collect(),
        }
    }
}
