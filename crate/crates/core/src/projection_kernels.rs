//! Shared numerical kernels: mass-weighted pseudoinverse, null-space
//! projectors, explicit orthogonal complements from a coordinate partition,
//! and the reduced (projected) system matrices.
//!
//! M is always applied through its Cholesky factorization; the inverse is
//! never formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A split of the coordinates into dependent (eliminated) and independent
/// (kept) indices. The dependent block of the constraint Jacobian must be
/// invertible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    dependent: Vec<usize>,
    independent: Vec<usize>,
}

impl Partition {
    pub fn new(dependent: Vec<usize>, independent: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in dependent.iter().chain(independent.iter()) {
            if i >= n {
                return Err(Error::InvalidPartition(format!(
                    "coordinate index {} out of range for n = {}",
                    i, n
                )));
            }
            if seen[i] {
                return Err(Error::InvalidPartition(format!(
                    "coordinate index {} listed twice",
                    i
                )));
            }
            seen[i] = true;
        }
        if dependent.len() + independent.len() != n {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} of {} coordinates",
                dependent.len() + independent.len(),
                n
            )));
        }
        Ok(Self {
            dependent,
            independent,
        })
    }

    /// The canonical partition for joint locking: the locked joints (in the
    /// given order, matching the selector rows) are dependent, the remaining
    /// joints are independent in ascending order.
    pub fn for_locked_joints(locked: &[usize], n: usize) -> Result<Self> {
        let independent = (0..n).filter(|i| !locked.contains(i)).collect();
        Self::new(locked.to_vec(), independent, n)
    }

    /// Picks dependent columns of a general Jacobian by greedy column
    /// pivoting, maximizing the pivot magnitude at each elimination step.
    pub fn greedy(j: &DMatrix<f64>) -> Result<Self> {
        let (m, n) = j.shape();
        let mut work = j.clone();
        let mut dependent = Vec::with_capacity(m);
        for step in 0..m {
            let mut best = None;
            let mut best_norm = 0.0;
            for col in 0..n {
                if dependent.contains(&col) {
                    continue;
                }
                let norm = work.column(col).rows_range(step..).norm();
                if norm > best_norm {
                    best_norm = norm;
                    best = Some(col);
                }
            }
            let pivot_col = best.ok_or_else(|| {
                Error::RankDeficient("constraint Jacobian has no usable pivot column".into())
            })?;
            if best_norm <= f64::EPSILON * j.amax() * n as f64 {
                return Err(Error::RankDeficient(
                    "constraint Jacobian is numerically rank deficient".into(),
                ));
            }
            dependent.push(pivot_col);
            // eliminate the chosen column from the remaining rows
            let mut pivot_row = step;
            let mut pivot_abs = work[(step, pivot_col)].abs();
            for row in (step + 1)..m {
                if work[(row, pivot_col)].abs() > pivot_abs {
                    pivot_abs = work[(row, pivot_col)].abs();
                    pivot_row = row;
                }
            }
            work.swap_rows(step, pivot_row);
            let pivot = work[(step, pivot_col)];
            for row in (step + 1)..m {
                let factor = work[(row, pivot_col)] / pivot;
                for col in 0..n {
                    let sub = factor * work[(step, col)];
                    work[(row, col)] -= sub;
                }
            }
        }
        let independent = (0..n).filter(|i| !dependent.contains(i)).collect();
        Self::new(dependent, independent, n)
    }

    pub fn dependent(&self) -> &[usize] {
        &self.dependent
    }

    pub fn independent(&self) -> &[usize] {
        &self.independent
    }

    pub fn n(&self) -> usize {
        self.dependent.len() + self.independent.len()
    }

    /// Extracts the independent sub-vector of a full coordinate vector.
    pub fn select_independent(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.independent.len(), self.independent.iter().map(|&i| full[i]))
    }
}

/// Dense LU solve with one round of iterative refinement, which keeps the
/// forward error near machine level for condition numbers up to about 1e6.
pub(crate) fn solve_dense_refined(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b)?;
    let residual = b - a * &x;
    if let Some(correction) = lu.solve(&residual) {
        x += correction;
    }
    Some(x)
}

fn check_weight(j: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<()> {
    if mass.nrows() != mass.ncols() || j.ncols() != mass.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "J is {}x{}, M is {}x{}",
            j.nrows(),
            j.ncols(),
            mass.nrows(),
            mass.ncols()
        )));
    }
    Ok(())
}

/// M-weighted right pseudoinverse M^-1 J^T (J M^-1 J^T)^-1.
///
/// Computed in factored form: with M = L L^T and the thin QR decomposition
/// L^-1 J^T = Q R, the pseudoinverse is L^-T Q R^-T. R^T R is exactly the
/// Cholesky factorization of the inner matrix J M^-1 J^T, but the inner
/// matrix is never formed, which keeps the projector identities near machine
/// precision even for badly conditioned weights.
pub fn weighted_pseudoinverse(j: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_weight(j, mass)?;
    let n = mass.ncols();
    let m = j.nrows();
    if m == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("weight matrix is not positive definite".into()))?;
    let l = chol.l();
    let g = l
        .solve_lower_triangular(&j.transpose())
        .ok_or_else(|| Error::RankDeficient("weight matrix is not positive definite".into()))?;
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    // rank check on the triangular factor
    let r_max = r.diagonal().amax();
    for i in 0..m {
        if r[(i, i)].abs() <= r_max * n as f64 * f64::EPSILON * 1e3 {
            return Err(Error::RankDeficient(
                "J M^-1 J^T is singular: constraint rows are dependent".into(),
            ));
        }
    }
    let wt = r
        .solve_upper_triangular(&q.transpose())
        .ok_or_else(|| Error::RankDeficient("triangular factor is singular".into()))?;
    l.transpose()
        .solve_upper_triangular(&wt.transpose())
        .ok_or_else(|| Error::RankDeficient("weight factor is singular".into()))
}

/// Projector N = I - J_M^+ J onto the null space of J, weighted by M.
pub fn nullspace_projector(j: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_weight(j, mass)?;
    let n = mass.ncols();
    if j.nrows() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let pinv = weighted_pseudoinverse(j, mass)?;
    Ok(DMatrix::identity(n, n) - pinv * j)
}

/// Explicit orthogonal complement of J from a coordinate partition:
/// the dependent rows carry -J_p^-1 J_s, the independent rows the identity,
/// permuted back to the original coordinate order. Satisfies J F = 0.
pub fn orthogonal_complement(j: &DMatrix<f64>, part: &Partition) -> Result<DMatrix<f64>> {
    let (m, n) = j.shape();
    if part.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} coordinates, J has {}",
            part.n(),
            n
        )));
    }
    if part.dependent().len() != m {
        return Err(Error::InvalidPartition(format!(
            "{} dependent coordinates for {} constraints",
            part.dependent().len(),
            m
        )));
    }
    let k = n - m;
    let mut f = DMatrix::zeros(n, k);
    if m > 0 {
        let jp = j.select_columns(part.dependent().iter());
        let js = j.select_columns(part.independent().iter());
        let solved = jp.lu().solve(&js).ok_or_else(|| {
            Error::InvalidPartition("dependent block J_p of the Jacobian is singular".into())
        })?;
        for (row, &coord) in part.dependent().iter().enumerate() {
            for col in 0..k {
                f[(coord, col)] = -solved[(row, col)];
            }
        }
    }
    for (col, &coord) in part.independent().iter().enumerate() {
        f[(coord, col)] = 1.0;
    }
    Ok(f)
}

/// Reduced mass matrix F^T M F and reduced force
/// F^T (u - C qd - P - Q - M * fdot_sdot), i.e. the projected equations
/// solved for the independent accelerations.
pub fn reduced_system(
    f: &DMatrix<f64>,
    mass: &DMatrix<f64>,
    coriolis: &DVector<f64>,
    potential: &DVector<f64>,
    other: &DVector<f64>,
    applied: &DVector<f64>,
    fdot_sdot: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = f.nrows();
    if mass.nrows() != n
        || mass.ncols() != n
        || coriolis.len() != n
        || potential.len() != n
        || other.len() != n
        || applied.len() != n
        || fdot_sdot.len() != n
    {
        return Err(Error::DimensionMismatch(
            "reduced_system inputs must share the full coordinate dimension".into(),
        ));
    }
    let reduced_mass = f.transpose() * mass * f;
    let force = applied - coriolis - potential - other - mass * fdot_sdot;
    Ok((reduced_mass, f.transpose() * force))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize, cond: f64) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = raw.qr().q();
        // spectrum [1/cond, 1], so norms stay O(1) at any condition number
        let eigs = DVector::from_fn(n, |i, _| {
            if n == 1 {
                1.0
            } else {
                cond.powf(-(i as f64) / (n - 1) as f64)
            }
        });
        let m = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
        // symmetrize against rounding
        0.5 * (&m + m.transpose())
    }

    fn selector(rows: &[usize], n: usize) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(rows.len(), n);
        for (r, &c) in rows.iter().enumerate() {
            j[(r, c)] = 1.0;
        }
        j
    }

    #[test]
    fn unit_row_with_identity_weight() {
        let j = selector(&[1], 3);
        let eye = DMatrix::identity(3, 3);
        let pinv = weighted_pseudoinverse(&j, &eye).unwrap();
        assert_abs_diff_eq!(pinv, j.transpose(), epsilon = 1e-14);
    }

    #[test]
    fn identity_weight_reduces_to_plain_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eye = DMatrix::identity(5, 5);
        for _ in 0..20 {
            let j = DMatrix::from_fn(2, 5, |_, _| rng.gen_range(-1.0..1.0));
            let pinv = weighted_pseudoinverse(&j, &eye).unwrap();
            let plain = j.transpose() * (&j * j.transpose()).try_inverse().unwrap();
            assert_abs_diff_eq!(pinv, plain, epsilon = 1e-10);

            // and the unweighted projector is symmetric
            let n_proj = nullspace_projector(&j, &eye).unwrap();
            assert_abs_diff_eq!(n_proj.clone(), n_proj.transpose(), epsilon = 1e-12);
        }
    }

    /// Locking joint 2 of a 3-joint chain: the weighted pseudoinverse has the
    /// closed form (minv_12/minv_22, 1, minv_32/minv_22)^T in terms of the
    /// entries of M^-1, and the projector follows. The inverse is formed
    /// explicitly here as the cross-check.
    #[test]
    fn locked_joint_pseudoinverse_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..10 {
            let m = random_spd(&mut rng, 3, 1e3);
            let minv = m.clone().try_inverse().unwrap();
            let j = selector(&[1], 3);

            let pinv = weighted_pseudoinverse(&j, &m).unwrap();
            let expected = DVector::from_vec(vec![
                minv[(0, 1)] / minv[(1, 1)],
                1.0,
                minv[(2, 1)] / minv[(1, 1)],
            ]);
            assert_abs_diff_eq!(pinv.column(0).clone_owned(), expected, epsilon = 1e-10);

            let n_proj = nullspace_projector(&j, &m).unwrap();
            let expected_n = DMatrix::from_row_slice(
                3,
                3,
                &[
                    1.0,
                    -minv[(0, 1)] / minv[(1, 1)],
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    -minv[(2, 1)] / minv[(1, 1)],
                    1.0,
                ],
            );
            assert_abs_diff_eq!(n_proj, expected_n, epsilon = 1e-10);
        }
    }

    #[test]
    fn coordinate_projector_for_identity_weight() {
        let j = selector(&[1], 3);
        let eye = DMatrix::identity(3, 3);
        let n_proj = nullspace_projector(&j, &eye).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0]));
        assert_abs_diff_eq!(n_proj, expected, epsilon = 1e-14);
    }

    #[test]
    fn projector_identities_over_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..100 {
            let n = rng.gen_range(2..=8);
            let m = rng.gen_range(1..n);
            let cond = 10f64.powf(rng.gen_range(0.0..6.0));
            let mass = random_spd(&mut rng, n, cond);
            let j = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));

            let pinv = weighted_pseudoinverse(&j, &mass).unwrap();
            let n_proj = nullspace_projector(&j, &mass).unwrap();

            let eye = DMatrix::identity(m, m);
            assert!((&j * &pinv - eye).amax() <= 1e-10, "J J+ != I in trial {}", trial);
            assert!((&j * &n_proj).amax() <= 1e-10, "J N != 0 in trial {}", trial);
            assert!((&n_proj * &n_proj - &n_proj).amax() <= 1e-10, "N not idempotent in trial {}", trial);
            assert!((&n_proj * &pinv).amax() <= 1e-10, "N J+ != 0 in trial {}", trial);
        }
    }

    #[test]
    fn rank_deficient_rows_are_rejected() {
        let mut j = DMatrix::zeros(2, 4);
        j[(0, 2)] = 1.0;
        j[(1, 2)] = 1.0; // duplicated row
        let eye = DMatrix::identity(4, 4);
        assert!(matches!(
            weighted_pseudoinverse(&j, &eye),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn locked_joint_complement_is_a_selector() {
        let j = selector(&[1], 3);
        let part = Partition::for_locked_joints(&[1], 3).unwrap();
        let f = orthogonal_complement(&j, &part).unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(f, expected, epsilon = 0.0);
    }

    #[test]
    fn empty_constraint_set_gives_identity_complement() {
        let j = DMatrix::zeros(0, 4);
        let part = Partition::for_locked_joints(&[], 4).unwrap();
        let f = orthogonal_complement(&j, &part).unwrap();
        assert_abs_diff_eq!(f, DMatrix::identity(4, 4), epsilon = 0.0);
    }

    #[test]
    fn random_complement_annihilates_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..50 {
            let j = DMatrix::from_fn(2, 5, |_, _| rng.gen_range(-1.0..1.0));
            let part = Partition::greedy(&j).unwrap();
            let f = orthogonal_complement(&j, &part).unwrap();
            assert!((&j * &f).amax() <= 1e-10);
            // identity rows on the independent coordinates give full column rank
            for (col, &coord) in part.independent().iter().enumerate() {
                assert_eq!(f[(coord, col)], 1.0);
            }
            // range(F) = ker(J): dimensions match and J F = 0
            assert_eq!(f.ncols(), 3);
            assert_eq!(f.rank(1e-12), 3);
        }
    }

    #[test]
    fn singular_dependent_block_is_an_error() {
        // J_p singular when picking a zero column as dependent
        let mut j = DMatrix::zeros(1, 3);
        j[(0, 1)] = 1.0;
        let part = Partition::new(vec![0], vec![1, 2], 3).unwrap();
        assert!(matches!(
            orthogonal_complement(&j, &part),
            Err(Error::InvalidPartition(_))
        ));
    }

    #[test]
    fn reduced_system_with_identity_complement_is_unreduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mass = random_spd(&mut rng, 4, 1e2);
        let f = DMatrix::identity(4, 4);
        let c = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let p = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let q = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let u = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let zero = DVector::zeros(4);
        let (mbar, rhs) = reduced_system(&f, &mass, &c, &p, &q, &u, &zero).unwrap();
        assert_abs_diff_eq!(mbar, mass, epsilon = 1e-14);
        assert_abs_diff_eq!(rhs, &u - &c - &p - &q, epsilon = 1e-14);
    }

    #[test]
    fn locking_reduces_to_submatrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mass = random_spd(&mut rng, 3, 1e2);
        let j = selector(&[1], 3);
        let part = Partition::for_locked_joints(&[1], 3).unwrap();
        let f = orthogonal_complement(&j, &part).unwrap();
        let zero = DVector::zeros(3);
        let (mbar, _) = reduced_system(&f, &mass, &zero, &zero, &zero, &zero, &zero).unwrap();
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[mass[(0, 0)], mass[(0, 2)], mass[(2, 0)], mass[(2, 2)]],
        );
        assert_abs_diff_eq!(mbar, expected, epsilon = 1e-14);
    }

    #[test]
    fn congruence_preserves_definiteness() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..20 {
            let n = rng.gen_range(3..=7);
            let m = rng.gen_range(1..n);
            let mass = random_spd(&mut rng, n, 1e4);
            let j = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
            let part = Partition::greedy(&j).unwrap();
            let f = orthogonal_complement(&j, &part).unwrap();
            let zero = DVector::zeros(n);
            let (mbar, _) = reduced_system(&f, &mass, &zero, &zero, &zero, &zero, &zero).unwrap();
            let eigs = mbar.symmetric_eigenvalues();
            assert!(eigs.min() > 0.0);
        }
    }
}
