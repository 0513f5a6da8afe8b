//! Momentum-consistent velocity jumps at constraint activation events.
//!
//! When constraints J2 are activated on top of the persistent set J1, the
//! post-event velocity must satisfy the enlarged constraint set while the
//! generalized momentum balance M dqd + J+^T Lambda = U holds across the
//! event. Four equivalent solvers compute the jump:
//!
//! * [`solve_general`]: one saddle system in the full stacked constraints;
//! * [`solve_partitioned`]: the same system with the impulse split into the
//!   persistent and the newly activated parts;
//! * [`solve_redundant_projected`]: persistent constraints eliminated through
//!   the weighted null-space projector, unknowns (dqd, Lambda2);
//! * [`solve_minimal_voronets`]: persistent constraints eliminated through an
//!   orthogonal complement F1, unknowns (ds, Lambda2) in minimal coordinates.
//!
//! [`naive_zeroing`] is the deliberately inconsistent control that zeroes the
//! newly locked rates without momentum balance.

use nalgebra::{DMatrix, DVector};

use crate::constraint_schedule::validate_regularity;
use crate::error::{Error, Result};
use crate::projection_kernels::nullspace_projector;

/// Pre-event constraint residual allowed on the incoming velocity.
const PRE_EVENT_VELOCITY_TOL: f64 = 1e-8;

/// Relative residual allowed on a solved saddle system.
const SADDLE_RESIDUAL_TOL: f64 = 1e-10;

/// Everything a transition solve needs at the event configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionInput {
    /// Mass matrix evaluated at the event configuration.
    pub mass: DMatrix<f64>,
    /// Persistent constraint Jacobian (m1 x n).
    pub j1: DMatrix<f64>,
    /// Activated constraint Jacobian (m2 x n).
    pub j2: DMatrix<f64>,
    /// Velocity just before the event.
    pub qd_minus: DVector<f64>,
    /// Impulsive applied force U, zero for smooth control.
    pub impulse_applied: DVector<f64>,
}

impl TransitionInput {
    /// Validates dimensions, the regularity assumptions and that the incoming
    /// velocity satisfies the persistent constraints.
    pub fn new(
        mass: DMatrix<f64>,
        j1: DMatrix<f64>,
        j2: DMatrix<f64>,
        qd_minus: DVector<f64>,
    ) -> Result<Self> {
        let n = mass.ncols();
        if mass.nrows() != n || j1.ncols() != n || j2.ncols() != n || qd_minus.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "M {}x{}, J1 {}x{}, J2 {}x{}, qd {}",
                mass.nrows(),
                mass.ncols(),
                j1.nrows(),
                j1.ncols(),
                j2.nrows(),
                j2.ncols(),
                qd_minus.len()
            )));
        }
        let report = validate_regularity(&j1, &j2, &mass)?;
        if !report.ok {
            return Err(Error::RankDeficient(format!(
                "constraint ranks {}/{}/{} violate the regularity assumptions (m1 = {}, m2 = {})",
                report.rank_j1, report.rank_j2, report.rank_stacked, report.m1, report.m2
            )));
        }
        if j1.nrows() > 0 {
            let residual = (&j1 * &qd_minus).amax();
            if residual > PRE_EVENT_VELOCITY_TOL {
                return Err(Error::InvalidSchedule(format!(
                    "incoming velocity violates the persistent constraints (|J1 qd| = {:.3e})",
                    residual
                )));
            }
        }
        let n = mass.ncols();
        Ok(Self {
            mass,
            j1,
            j2,
            qd_minus,
            impulse_applied: DVector::zeros(n),
        })
    }

    pub fn with_impulse(mut self, impulse: DVector<f64>) -> Result<Self> {
        if impulse.len() != self.mass.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "impulse has {} entries, model has {}",
                impulse.len(),
                self.mass.ncols()
            )));
        }
        self.impulse_applied = impulse;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.mass.ncols()
    }

    /// Stacked post-event constraint Jacobian (J1; J2).
    pub fn stacked(&self) -> DMatrix<f64> {
        let (m1, m2, n) = (self.j1.nrows(), self.j2.nrows(), self.n());
        let mut j = DMatrix::zeros(m1 + m2, n);
        j.rows_mut(0, m1).copy_from(&self.j1);
        j.rows_mut(m1, m2).copy_from(&self.j2);
        j
    }
}

/// Velocity jump, post-event velocity and impulsive constraint forces.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionResult {
    /// Velocity jump dqd = qd_plus - qd_minus.
    pub dqd: DVector<f64>,
    /// Velocity just after the event.
    pub qd_plus: DVector<f64>,
    /// Impulse Lambda2 of the constraints activated at the event.
    pub impulse: DVector<f64>,
    /// Impulse Lambda1 of the persistent constraints, when the formulation
    /// resolves it.
    pub impulse_persistent: Option<DVector<f64>>,
    /// Kinetic energy 0.5 dqd^T M dqd removed by the jump (equals the drop in
    /// total energy when no impulsive force is applied).
    pub kinetic_drop: f64,
}

impl TransitionResult {
    fn assemble(
        input: &TransitionInput,
        dqd: DVector<f64>,
        impulse: DVector<f64>,
        impulse_persistent: Option<DVector<f64>>,
    ) -> Self {
        let kinetic_drop = 0.5 * dqd.dot(&(&input.mass * &dqd));
        let qd_plus = &input.qd_minus + &dqd;
        Self {
            dqd,
            qd_plus,
            impulse,
            impulse_persistent,
            kinetic_drop,
        }
    }

    /// Stacked impulse (Lambda1; Lambda2) when Lambda1 is available.
    pub fn full_impulse(&self) -> Option<DVector<f64>> {
        self.impulse_persistent.as_ref().map(|l1| {
            let mut full = DVector::zeros(l1.len() + self.impulse.len());
            full.rows_mut(0, l1.len()).copy_from(l1);
            full.rows_mut(l1.len(), self.impulse.len()).copy_from(&self.impulse);
            full
        })
    }
}

/// Solves a dense saddle system and enforces the relative residual bound.
fn solve_saddle(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let a_norm = a.amax();
    let x = crate::projection_kernels::solve_dense_refined(&a, &b)
        .ok_or_else(|| Error::RankDeficient("transition saddle matrix is singular".into()))?;
    let residual = (&a * &x - &b).amax();
    let scale = 1.0 + a_norm * x.amax() + b.amax();
    if residual > SADDLE_RESIDUAL_TOL * scale {
        return Err(Error::RankDeficient(format!(
            "transition saddle system is too ill-conditioned (residual {:.3e})",
            residual
        )));
    }
    Ok(x)
}

/// Velocity jump from the full saddle system in the stacked constraints:
/// [[M, J+^T], [J+, 0]] (dqd; Lambda) = (U; -J+ qd_minus).
pub fn solve_general(input: &TransitionInput) -> Result<TransitionResult> {
    let n = input.n();
    let j_plus = input.stacked();
    let m = j_plus.nrows();

    let mut a = DMatrix::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(&input.mass);
    a.view_mut((0, n), (n, m)).copy_from(&j_plus.transpose());
    a.view_mut((n, 0), (m, n)).copy_from(&j_plus);

    let mut b = DVector::zeros(n + m);
    b.rows_mut(0, n).copy_from(&input.impulse_applied);
    b.rows_mut(n, m).copy_from(&(-(&j_plus * &input.qd_minus)));

    let x = solve_saddle(a, b)?;
    let dqd = x.rows(0, n).clone_owned();
    let m1 = input.j1.nrows();
    let lambda1 = x.rows(n, m1).clone_owned();
    let lambda2 = x.rows(n + m1, input.j2.nrows()).clone_owned();
    Ok(TransitionResult::assemble(input, dqd, lambda2, Some(lambda1)))
}

/// Velocity jump from the partitioned saddle system with separate impulses
/// for the persistent and the activated constraints.
pub fn solve_partitioned(input: &TransitionInput) -> Result<TransitionResult> {
    let n = input.n();
    let (m1, m2) = (input.j1.nrows(), input.j2.nrows());

    let mut a = DMatrix::zeros(n + m1 + m2, n + m1 + m2);
    a.view_mut((0, 0), (n, n)).copy_from(&input.mass);
    a.view_mut((0, n), (n, m1)).copy_from(&input.j1.transpose());
    a.view_mut((0, n + m1), (n, m2)).copy_from(&input.j2.transpose());
    a.view_mut((n, 0), (m1, n)).copy_from(&input.j1);
    a.view_mut((n + m1, 0), (m2, n)).copy_from(&input.j2);

    let mut b = DVector::zeros(n + m1 + m2);
    b.rows_mut(0, n).copy_from(&input.impulse_applied);
    b.rows_mut(n, m1).copy_from(&(-(&input.j1 * &input.qd_minus)));
    b.rows_mut(n + m1, m2).copy_from(&(-(&input.j2 * &input.qd_minus)));

    let x = solve_saddle(a, b)?;
    let dqd = x.rows(0, n).clone_owned();
    let lambda1 = x.rows(n, m1).clone_owned();
    let lambda2 = x.rows(n + m1, m2).clone_owned();
    Ok(TransitionResult::assemble(input, dqd, lambda2, Some(lambda1)))
}

/// Velocity jump in redundant coordinates with the persistent constraints
/// eliminated by the weighted null-space projector N = N_{J1,M}:
/// [[M, N^T J2^T], [J2 N, 0]] (dqd; Lambda2) = (N^T U; -J2 qd_minus).
///
/// The empty persistent set is included with N = I.
pub fn solve_redundant_projected(input: &TransitionInput) -> Result<TransitionResult> {
    let n = input.n();
    let m2 = input.j2.nrows();
    let n_proj = nullspace_projector(&input.j1, &input.mass)?;
    let coupled = n_proj.transpose() * input.j2.transpose();

    let mut a = DMatrix::zeros(n + m2, n + m2);
    a.view_mut((0, 0), (n, n)).copy_from(&input.mass);
    a.view_mut((0, n), (n, m2)).copy_from(&coupled);
    a.view_mut((n, 0), (m2, n)).copy_from(&coupled.transpose());

    let mut b = DVector::zeros(n + m2);
    // The momentum balance projects the applied impulse through N^T as well.
    b.rows_mut(0, n)
        .copy_from(&(n_proj.transpose() * &input.impulse_applied));
    b.rows_mut(n, m2).copy_from(&(-(&input.j2 * &input.qd_minus)));

    let x = solve_saddle(a, b)?;
    let dqd = x.rows(0, n).clone_owned();
    let lambda2 = x.rows(n, m2).clone_owned();
    Ok(TransitionResult::assemble(input, dqd, lambda2, None))
}

/// Velocity jump in minimal coordinates: with the orthogonal complement F1 of
/// the persistent constraints and the reduced mass matrix Mbar = F1^T M F1,
/// [[Mbar, F1^T J2^T], [J2 F1, 0]] (ds; Lambda2) = (F1^T U; -J2 F1 s_minus),
/// lifted back through dqd = F1 ds.
pub fn solve_minimal_voronets(input: &TransitionInput, f1: &DMatrix<f64>) -> Result<TransitionResult> {
    let n = input.n();
    let m2 = input.j2.nrows();
    let k = f1.ncols();
    if f1.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "orthogonal complement has {} rows, model has {} coordinates",
            f1.nrows(),
            n
        )));
    }
    if k + input.j1.nrows() != n {
        return Err(Error::InvalidPartition(format!(
            "orthogonal complement has {} columns for {} persistent constraints on {} coordinates",
            k,
            input.j1.nrows(),
            n
        )));
    }

    // Independent rates from the incoming velocity: qd_minus = F1 s_minus on
    // the persistent constraint surface, extracted by least squares.
    let gram = f1.transpose() * f1;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidPartition("orthogonal complement is rank deficient".into()))?;
    let s_minus = chol.solve(&(f1.transpose() * &input.qd_minus));

    let mbar = f1.transpose() * &input.mass * f1;
    let coupled = f1.transpose() * input.j2.transpose();

    let mut a = DMatrix::zeros(k + m2, k + m2);
    a.view_mut((0, 0), (k, k)).copy_from(&mbar);
    a.view_mut((0, k), (k, m2)).copy_from(&coupled);
    a.view_mut((k, 0), (m2, k)).copy_from(&coupled.transpose());

    let mut b = DVector::zeros(k + m2);
    b.rows_mut(0, k)
        .copy_from(&(f1.transpose() * &input.impulse_applied));
    b.rows_mut(k, m2)
        .copy_from(&(-(&input.j2 * (f1 * &s_minus))));

    let x = solve_saddle(a, b)?;
    let ds = x.rows(0, k).clone_owned();
    let lambda2 = x.rows(k, m2).clone_owned();
    let dqd = f1 * ds;
    Ok(TransitionResult::assemble(input, dqd, lambda2, None))
}

/// The inconsistent control experiment: zero the newly locked rates and leave
/// every other rate untouched. The reported impulse is the selector pullback
/// -J2 M dqd of the momentum change, a diagnostic rather than a solution of
/// the momentum balance.
pub fn naive_zeroing(input: &TransitionInput) -> Result<TransitionResult> {
    let locked = selector_joints(&input.j2).ok_or(Error::NonSelectorConstraint)?;
    let mut dqd = DVector::zeros(input.n());
    for &j in &locked {
        dqd[j] = -input.qd_minus[j];
    }
    let implied = -(&input.j2 * (&input.mass * &dqd));
    Ok(TransitionResult::assemble(input, dqd, implied, None))
}

/// Joint indices of selector rows, or None if any row is not a canonical
/// basis vector.
fn selector_joints(j: &DMatrix<f64>) -> Option<Vec<usize>> {
    let mut joints = Vec::with_capacity(j.nrows());
    for row in j.row_iter() {
        let mut hit = None;
        for (col, &v) in row.iter().enumerate() {
            if v == 1.0 && hit.is_none() {
                hit = Some(col);
            } else if v != 0.0 {
                return None;
            }
        }
        joints.push(hit?);
    }
    Some(joints)
}
