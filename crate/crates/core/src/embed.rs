//! Laplacian embedding of point sets from several images.
//!
//! Points of one image are linked by a Gaussian kernel on image coordinates;
//! points of different images by a Gaussian kernel on descriptors. The joint
//! affinity `A` defines the Laplacian `L = D_A - A`, and the embedding is made of
//! the bottom nontrivial generalized eigenvectors of `L f = beta D_A f`.

use nalgebra::SymmetricEigen;

use crate::error::{Result, RomlError};
use crate::features::FeatureSet;
use crate::prox::{ensure_finite, DenseMatrix};

/// Generalized eigenvalues at or below this fraction of the largest one are
/// treated as zero.
pub const TRIVIAL_EIGEN_RATIO: f64 = 1e-9;
pub const DEFAULT_SIGMA_SPA: f64 = 10.0;
pub const DEFAULT_SIGMA_DES: f64 = 0.2;

/// Image coordinates (`2 x n_k`) and raw descriptors (`d_raw x n_k`) of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    coords: DenseMatrix,
    descriptors: DenseMatrix,
}

impl PointSet {
    pub fn new(coords: DenseMatrix, descriptors: DenseMatrix) -> Result<Self> {
        if coords.nrows() != 2 {
            return Err(RomlError::Dimension(format!(
                "coordinates must have 2 rows, got {}",
                coords.nrows()
            )));
        }
        if coords.ncols() != descriptors.ncols() {
            return Err(RomlError::Dimension(format!(
                "{} coordinates but {} descriptors",
                coords.ncols(),
                descriptors.ncols()
            )));
        }
        ensure_finite(&coords, "coordinates")?;
        ensure_finite(&descriptors, "descriptors")?;
        Ok(Self { coords, descriptors })
    }

    pub fn coords(&self) -> &DenseMatrix {
        &self.coords
    }

    pub fn descriptors(&self) -> &DenseMatrix {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.coords.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_sigma(sigma: f64, what: &str) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(RomlError::Config(format!("{what} must be positive, got {sigma}")))
    }
}

fn gaussian_kernel(a: &DenseMatrix, b: &DenseMatrix, sigma: f64) -> DenseMatrix {
    let scale = 1.0 / (2.0 * sigma * sigma);
    DenseMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        let dist2 = (a.column(i) - b.column(j)).norm_squared();
        (-dist2 * scale).exp()
    })
}

/// `exp(-||x_i - x_j||^2 / (2 sigma^2))` over the points of one image.
pub fn spatial_affinity(ps: &PointSet, sigma_spa: f64) -> Result<DenseMatrix> {
    check_sigma(sigma_spa, "spatial sigma")?;
    Ok(gaussian_kernel(&ps.coords, &ps.coords, sigma_spa))
}

/// `exp(-||f_i^p - f_j^q||^2 / (2 sigma^2))` between the points of two images.
pub fn descriptor_affinity(p: &PointSet, q: &PointSet, sigma_des: f64) -> Result<DenseMatrix> {
    check_sigma(sigma_des, "descriptor sigma")?;
    if p.descriptors.nrows() != q.descriptors.nrows() {
        return Err(RomlError::Dimension(format!(
            "descriptor dimensions differ: {} vs {}",
            p.descriptors.nrows(),
            q.descriptors.nrows()
        )));
    }
    Ok(gaussian_kernel(&p.descriptors, &q.descriptors, sigma_des))
}

/// Joint affinity over all points, images stacked in order.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    a: DenseMatrix,
    /// Image `k` owns rows `block_index[k] .. block_index[k + 1]`.
    block_index: Vec<usize>,
}

impl AffinityMatrix {
    /// Validates symmetry (within 1e-12), nonnegativity and the block layout.
    pub fn new(a: DenseMatrix, block_index: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(RomlError::Dimension(format!("affinity is {}x{}, not square", n, a.ncols())));
        }
        if block_index.first() != Some(&0)
            || block_index.last() != Some(&n)
            || block_index.windows(2).any(|w| w[0] > w[1])
        {
            return Err(RomlError::Dimension(format!(
                "block offsets {block_index:?} do not partition {n} points"
            )));
        }
        ensure_finite(&a, "affinity")?;
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] < 0.0 {
                    return Err(RomlError::InvalidInput(format!("negative affinity at ({i}, {j})")));
                }
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 {
                    return Err(RomlError::InvalidInput(format!("affinity not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { a, block_index })
    }

    /// Spatial kernels on the diagonal blocks, descriptor kernels elsewhere.
    pub fn build(points: &[PointSet], sigma_spa: f64, sigma_des: f64) -> Result<Self> {
        check_sigma(sigma_spa, "spatial sigma")?;
        check_sigma(sigma_des, "descriptor sigma")?;
        let mut block_index = vec![0];
        for ps in points {
            block_index.push(block_index.last().unwrap() + ps.len());
        }
        let total = *block_index.last().unwrap();
        let mut a = DenseMatrix::zeros(total, total);
        for (p, ps) in points.iter().enumerate() {
            let rp = block_index[p];
            a.view_mut((rp, rp), (ps.len(), ps.len()))
                .copy_from(&spatial_affinity(ps, sigma_spa)?);
            for (q, qs) in points.iter().enumerate().skip(p + 1) {
                let rq = block_index[q];
                let block = descriptor_affinity(ps, qs, sigma_des)?;
                a.view_mut((rp, rq), (ps.len(), qs.len())).copy_from(&block);
                a.view_mut((rq, rp), (qs.len(), ps.len())).copy_from(&block.transpose());
            }
        }
        Ok(Self { a, block_index })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn block_index(&self) -> &[usize] {
        &self.block_index
    }

    pub fn n_images(&self) -> usize {
        self.block_index.len() - 1
    }

    /// Row sums, the diagonal of `D_A`.
    pub fn degrees(&self) -> Vec<f64> {
        self.a.row_iter().map(|r| r.sum()).collect()
    }

    /// `D_A - A`.
    pub fn laplacian(&self) -> DenseMatrix {
        let mut l = -&self.a;
        for (i, deg) in self.degrees().into_iter().enumerate() {
            l[(i, i)] += deg;
        }
        l
    }
}

/// Bottom nontrivial generalized eigenvectors of an affinity.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `N x d`; row `i` is the embedded feature of point `i`.
    pub coords: DenseMatrix,
    /// Generalized eigenvalues of the columns of `coords`, ascending.
    pub eigenvalues: Vec<f64>,
    pub block_index: Vec<usize>,
}

impl Embedding {
    /// Splits the rows per image into `d x n_k` feature sets.
    pub fn feature_sets(&self) -> Result<Vec<FeatureSet>> {
        self.block_index
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let rows = self.coords.rows(w[0], w[1] - w[0]).transpose();
                FeatureSet::new(rows, format!("image{k}"))
            })
            .collect()
    }
}

/// Solves `L f = beta D_A f` through the symmetric matrix
/// `D_A^{-1/2} L D_A^{-1/2}` and keeps the `d` smallest eigenvalues above
/// [`TRIVIAL_EIGEN_RATIO`] times the largest. Columns satisfy
/// `F^T D_A F = I`; each is signed so its largest-magnitude entry is positive.
pub fn laplacian_embed(affinity: &AffinityMatrix, d: usize) -> Result<Embedding> {
    if d == 0 {
        return Err(RomlError::Config("embedding dimension must be at least 1".into()));
    }
    let degrees = affinity.degrees();
    if let Some(index) = degrees.iter().position(|&v| v <= 0.0) {
        return Err(RomlError::IsolatedPoint { index });
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|v| 1.0 / v.sqrt()).collect();
    let lap = affinity.laplacian();
    let n = lap.nrows();
    let m = DenseMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * lap[(i, j)] * inv_sqrt[j]);
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0).ok_or(RomlError::SvdFailure {
        rows: n,
        cols: n,
        iterations: 0,
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let beta_max = order.last().map_or(0.0, |&i| eig.eigenvalues[i]);
    let chosen: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > TRIVIAL_EIGEN_RATIO * beta_max)
        .take(d)
        .collect();
    if chosen.len() < d {
        return Err(RomlError::InsufficientSpectrum {
            available: chosen.len(),
            requested: d,
        });
    }

    let mut coords = DenseMatrix::zeros(n, d);
    for (c, &i) in chosen.iter().enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().zip(&inv_sqrt).map(|(u, s)| u * s).collect();
        let peak = v.iter().enumerate().fold(0, |best, (idx, x)| {
            if x.abs() > v[best].abs() {
                idx
            } else {
                best
            }
        });
        if v[peak] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        coords.column_mut(c).copy_from_slice(&v);
    }
    Ok(Embedding {
        coords,
        eigenvalues: chosen.iter().map(|&i| eig.eigenvalues[i]).collect(),
        block_index: affinity.block_index.clone(),
    })
}
