//! Rectangular linear sum assignment.
//!
//! A problem has `n_src >= n_tgt` sources (rows of the cost matrix) and
//! `n_tgt` targets (columns). Every target receives a distinct source, which
//! is exactly one partial permutation matrix.

use crate::error::{Result, RomlError};
use crate::prox::{ensure_finite, DenseMatrix};

/// Largest source count accepted by [`brute_force_lsap`].
pub const BRUTE_FORCE_MAX_SOURCES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem {
    cost: DenseMatrix,
}

impl AssignmentProblem {
    /// `cost` is `n_src x n_tgt`; entry `(i, j)` is the cost of giving source
    /// `i` to target `j`. Costs may be negative.
    pub fn new(cost: DenseMatrix) -> Result<Self> {
        let (n_src, n_tgt) = cost.shape();
        if n_tgt == 0 {
            return Err(RomlError::InvalidInput(
                "assignment problem needs at least one target".into(),
            ));
        }
        if n_src < n_tgt {
            return Err(RomlError::Infeasible { n_src, n_tgt });
        }
        ensure_finite(&cost, "assignment cost")?;
        Ok(Self { cost })
    }

    pub fn cost(&self) -> &DenseMatrix {
        &self.cost
    }

    pub fn n_sources(&self) -> usize {
        self.cost.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.cost.ncols()
    }

    /// Total cost of `assignment` under this problem.
    pub fn total(&self, assignment: &Assignment) -> f64 {
        assignment
            .target_to_source
            .iter()
            .enumerate()
            .map(|(j, &i)| self.cost[(i, j)])
            .sum()
    }
}

/// Injective map from targets to sources.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub target_to_source: Vec<usize>,
}

impl Assignment {
    pub fn is_injective(&self, n_src: usize) -> bool {
        let mut seen = vec![false; n_src];
        self.target_to_source.iter().all(|&i| {
            if i >= n_src || seen[i] {
                false
            } else {
                seen[i] = true;
                true
            }
        })
    }
}

/// Exact minimum-cost assignment.
///
/// Shortest augmenting paths with dual potentials, adding one target at a
/// time. Runs in `O(n_tgt^2 * n_src)` without padding the cost matrix to a
/// square. When several sources reach the same reduced cost the lowest source
/// index is taken, so results are deterministic.
pub fn solve_lsap(problem: &AssignmentProblem) -> (Assignment, f64) {
    let cost = &problem.cost;
    let (n_src, n_tgt) = cost.shape();

    // 1-based indices; index 0 is the virtual root of each augmentation.
    let mut u = vec![0.0f64; n_tgt + 1];
    let mut v = vec![0.0f64; n_src + 1];
    // owner[i] = target currently holding source i (0 = free).
    let mut owner = vec![0usize; n_src + 1];
    let mut way = vec![0usize; n_src + 1];
    let mut minv = vec![0.0f64; n_src + 1];
    let mut used = vec![false; n_src + 1];

    for target in 1..=n_tgt {
        owner[0] = target;
        let mut i0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);

        loop {
            used[i0] = true;
            let j0 = owner[i0];
            let mut delta = f64::INFINITY;
            let mut i1 = 0usize;
            for i in 1..=n_src {
                if used[i] {
                    continue;
                }
                let reduced = cost[(i - 1, j0 - 1)] - u[j0] - v[i];
                if reduced < minv[i] {
                    minv[i] = reduced;
                    way[i] = i0;
                }
                if minv[i] < delta {
                    delta = minv[i];
                    i1 = i;
                }
            }
            for i in 0..=n_src {
                if used[i] {
                    u[owner[i]] += delta;
                    v[i] -= delta;
                } else {
                    minv[i] -= delta;
                }
            }
            i0 = i1;
            if owner[i0] == 0 {
                break;
            }
        }

        loop {
            let prev = way[i0];
            owner[i0] = owner[prev];
            i0 = prev;
            if i0 == 0 {
                break;
            }
        }
    }

    let mut target_to_source = vec![0usize; n_tgt];
    for i in 1..=n_src {
        if owner[i] != 0 {
            target_to_source[owner[i] - 1] = i - 1;
        }
    }
    let assignment = Assignment { target_to_source };
    let total = problem.total(&assignment);
    (assignment, total)
}

/// Exhaustive search over all injections. Ties go to the lexicographically
/// smallest `target_to_source`.
pub fn brute_force_lsap(problem: &AssignmentProblem) -> Result<(Assignment, f64)> {
    let (n_src, n_tgt) = problem.cost.shape();
    if n_src > BRUTE_FORCE_MAX_SOURCES {
        return Err(RomlError::Oversize(format!(
            "{n_src} sources exceeds the enumeration limit of {BRUTE_FORCE_MAX_SOURCES}"
        )));
    }

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut current = Vec::with_capacity(n_tgt);
    let mut used = vec![false; n_src];
    enumerate_injections(n_src, n_tgt, &mut current, &mut used, &mut |sel| {
        let total: f64 = sel.iter().enumerate().map(|(j, &i)| problem.cost[(i, j)]).sum();
        // Lexicographic order of enumeration plus a strict comparison keeps
        // the smallest tuple among equal totals.
        if best.as_ref().is_none_or(|(_, b)| total < *b) {
            best = Some((sel.to_vec(), total));
        }
    });
    let (target_to_source, total) = best.expect("n_src >= n_tgt guarantees a feasible injection");
    Ok((Assignment { target_to_source }, total))
}

/// Calls `visit` on every injective `[0, len) -> [0, n_src)` map in
/// lexicographic order.
pub(crate) fn enumerate_injections(
    n_src: usize,
    len: usize,
    current: &mut Vec<usize>,
    used: &mut [bool],
    visit: &mut dyn FnMut(&[usize]),
) {
    if current.len() == len {
        visit(current);
        return;
    }
    for i in 0..n_src {
        if used[i] {
            continue;
        }
        used[i] = true;
        current.push(i);
        enumerate_injections(n_src, len, current, used, visit);
        current.pop();
        used[i] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn problem(rows: usize, cols: usize, data: &[f64]) -> AssignmentProblem {
        AssignmentProblem::new(DenseMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn square_two_by_two() {
        let p = problem(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (a, total) = solve_lsap(&p);
        assert_eq!(a.target_to_source, vec![0, 1]);
        assert_eq!(total, 2.0);
        let (b, bt) = brute_force_lsap(&p).unwrap();
        assert_eq!(b.target_to_source, vec![0, 1]);
        assert_eq!(bt, 2.0);
    }

    #[test]
    fn rectangular_three_by_two() {
        let p = problem(3, 2, &[0.0, 9.0, 9.0, 0.0, 5.0, 5.0]);
        let (a, total) = solve_lsap(&p);
        assert_eq!(a.target_to_source, vec![0, 1]);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn single_entry() {
        let p = problem(1, 1, &[7.0]);
        assert_eq!(brute_force_lsap(&p).unwrap(), (Assignment { target_to_source: vec![0] }, 7.0));
        assert_eq!(solve_lsap(&p).1, 7.0);
    }

    #[test]
    fn negative_costs() {
        let p = problem(3, 2, &[-1.0, -5.0, -4.0, -2.0, 0.0, 0.0]);
        let (a, total) = solve_lsap(&p);
        assert_eq!(total, -9.0);
        assert_eq!(a.target_to_source, vec![1, 0]);
    }

    #[test]
    fn rejects_infeasible_and_oversize() {
        let err = AssignmentProblem::new(DenseMatrix::zeros(2, 3)).unwrap_err();
        assert_eq!(err, RomlError::Infeasible { n_src: 2, n_tgt: 3 });
        let big = AssignmentProblem::new(DenseMatrix::zeros(9, 2)).unwrap();
        assert!(matches!(brute_force_lsap(&big), Err(RomlError::Oversize(_))));
        assert!(AssignmentProblem::new(DenseMatrix::from_element(2, 2, f64::INFINITY)).is_err());
    }

    #[test]
    fn brute_force_breaks_ties_lexicographically() {
        let p = problem(3, 2, &[1.0; 6]);
        assert_eq!(brute_force_lsap(&p).unwrap().0.target_to_source, vec![0, 1]);
    }

    fn instance() -> impl Strategy<Value = DenseMatrix> {
        (1usize..=8).prop_flat_map(|n_src| {
            (Just(n_src), 1..=n_src).prop_flat_map(|(r, c)| {
                proptest::collection::vec(-50.0f64..50.0, r * c)
                    .prop_map(move |d| DenseMatrix::from_vec(r, c, d))
            })
        })
    }

    proptest! {
        #[test]
        fn matches_enumeration(cost in instance()) {
            let p = AssignmentProblem::new(cost).unwrap();
            let (a, total) = solve_lsap(&p);
            prop_assert!(a.is_injective(p.n_sources()));
            let (_, best) = brute_force_lsap(&p).unwrap();
            prop_assert!((total - best).abs() < 1e-9, "{total} vs {best}");
        }

        #[test]
        fn scaling_and_column_shift(cost in instance(), c in 0.1f64..10.0, shift in -20.0f64..20.0, col in 0usize..8) {
            let p = AssignmentProblem::new(cost.clone()).unwrap();
            let (_, base) = solve_lsap(&p);
            let scaled = AssignmentProblem::new(&cost * c).unwrap();
            prop_assert!((solve_lsap(&scaled).1 - c * base).abs() < 1e-8 * (1.0 + base.abs() * c));

            let col = col % cost.ncols();
            let mut shifted = cost.clone();
            shifted.column_mut(col).add_scalar_mut(shift);
            let shifted = AssignmentProblem::new(shifted).unwrap();
            let (a, st) = solve_lsap(&shifted);
            prop_assert!((st - (base + shift)).abs() < 1e-8);
            // The shifted optimum is optimal for the original costs too.
            prop_assert!((p.total(&a) - base).abs() < 1e-8);
        }
    }
}
