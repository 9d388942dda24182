use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rand_pcg::Pcg64;

use crate::error::{Result, RomlError};
use crate::features::{FeatureSet, PartialPermutation};
use crate::prox::DenseMatrix;

use super::GroundTruth;

/// Standard deviation of the 3D shape, in pixels.
const SHAPE_SCALE: f64 = 100.0;
/// Image-plane translations are drawn from this range on both axes.
const TRANSLATION_RANGE: (f64, f64) = (200.0, 400.0);

/// Point sets of a rigid 3D shape seen by `k` orthographic cameras.
///
/// The `n` shape points have i.i.d. normal coordinates scaled by 100. Each view
/// applies a uniformly random rotation (a normalized Gaussian quaternion),
/// keeps the first two rows, and adds a translation in `[200, 400]^2`, so the
/// correctly stacked `2K x n` coordinate matrix has rank at most 4. Inliers
/// get Gaussian noise of `noise_sd`; `n_outliers` extra points per view are
/// uniform over the bounding box of that view's inliers. Columns are shuffled
/// per view.
///
/// Draw order: shape points, then per view: rotation, translation, inlier
/// noise, outliers, shuffle.
pub fn generate_rank4_coords(
    k: usize,
    n: usize,
    n_outliers: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<(Vec<FeatureSet>, GroundTruth)> {
    if n < 4 {
        return Err(RomlError::InvalidInput(format!("need at least 4 shape points, got {n}")));
    }
    if k == 0 {
        return Err(RomlError::InvalidInput("need at least one view".into()));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(RomlError::InvalidInput(format!("noise sd must be nonnegative, got {noise_sd}")));
    }
    let mut rng = Pcg64::seed_from_u64(seed);
    let shape: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            Vector3::from_fn(|_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                SHAPE_SCALE * z
            })
        })
        .collect();
    let translation = Uniform::new(TRANSLATION_RANGE.0, TRANSLATION_RANGE.1).expect("valid range");
    let noise = Normal::new(0.0, noise_sd).expect("valid sd");
    let n_k = n + n_outliers;

    let mut sets = Vec::with_capacity(k);
    let mut ppms = Vec::with_capacity(k);
    let mut labels = Vec::with_capacity(k);
    for view in 0..k {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let rot: Matrix3<f64> = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
            .to_rotation_matrix()
            .into_inner();
        let t = Vector2::new(translation.sample(&mut rng), translation.sample(&mut rng));

        let mut points: Vec<(Vector2<f64>, Option<usize>)> = Vec::with_capacity(n_k);
        for (j, x) in shape.iter().enumerate() {
            let p = rot.fixed_rows::<2>(0) * x + t;
            let jitter = if noise_sd > 0.0 {
                Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                Vector2::zeros()
            };
            points.push((p + jitter, Some(j)));
        }
        let (lo, hi) = points.iter().fold(
            (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY)),
            |(lo, hi), (p, _)| (lo.inf(p), hi.sup(p)),
        );
        for _ in 0..n_outliers {
            let x = rng_uniform(&mut rng, lo.x, hi.x);
            let y = rng_uniform(&mut rng, lo.y, hi.y);
            points.push((Vector2::new(x, y), None));
        }

        let mut order: Vec<usize> = (0..n_k).collect();
        order.shuffle(&mut rng);
        let mut position = vec![0usize; n_k];
        let mut matrix = DenseMatrix::zeros(2, n_k);
        let mut view_labels = vec![None; n_k];
        for (pos, &orig) in order.iter().enumerate() {
            position[orig] = pos;
            matrix.column_mut(pos).copy_from(&points[orig].0);
            view_labels[pos] = points[orig].1;
        }
        sets.push(FeatureSet::new(matrix, format!("view{view}"))?);
        ppms.push(PartialPermutation::new(n_k, position[..n].to_vec())?);
        labels.push(view_labels);
    }
    Ok((sets, GroundTruth { ppms, labels }))
}

fn rng_uniform(rng: &mut Pcg64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        Uniform::new(lo, hi).expect("valid range").sample(rng)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::singular_values;
    use crate::solver::{assemble_d, StackingMode};

    #[test]
    fn noiseless_views_are_rank_four() {
        let (sets, truth) = generate_rank4_coords(6, 9, 0, 0.0, 4).unwrap();
        let d = assemble_d(&sets, &truth.ppms, StackingMode::Coordinate).unwrap();
        assert_eq!(d.shape(), (12, 9));
        let s = singular_values(&d).unwrap();
        assert!(s[4] < 1e-9 * s[0], "{s:?}");
        assert!(s[3] > 1e-3 * s[0]);
    }

    #[test]
    fn outliers_and_determinism() {
        let a = generate_rank4_coords(3, 5, 2, 0.5, 9).unwrap();
        let b = generate_rank4_coords(3, 5, 2, 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.0.iter().all(|fs| fs.len() == 7 && fs.dim() == 2));
        assert_eq!(a.1.inlier_count(), 15);
        assert!(generate_rank4_coords(3, 3, 0, 0.0, 1).is_err());
    }
}
