//! Piecewise constraints for scheduled joint locking.
//!
//! A schedule is an ordered list of lock events. Each event freezes one joint
//! at the value it has when the event fires, so the active constraint set can
//! only grow. The phase active at time t is right-continuous: the event at
//! t_i belongs to [t_i, t_{i+1}).

use nalgebra::{DMatrix, DVector};

use crate::chain_model::State;
use crate::error::{Error, Result};

/// Time tolerance when capturing a lock value from a running state.
const CAPTURE_TOL: f64 = 1e-9;

/// One scheduled lock of a single joint.
#[derive(Debug, Clone, PartialEq)]
pub struct LockEvent {
    /// Event time in seconds.
    pub time: f64,
    /// Zero-based index of the joint to lock.
    pub joint: usize,
    /// Angle at which the joint is held; captured from the running state at
    /// event time when absent.
    pub lock_value: Option<f64>,
}

impl LockEvent {
    pub fn new(time: f64, joint: usize) -> Self {
        Self {
            time,
            joint,
            lock_value: None,
        }
    }

    /// Returns a copy of the event with the lock value captured from `s`.
    pub fn captured(&self, s: &State) -> Result<LockEvent> {
        if self.lock_value.is_some() {
            return Err(Error::DoubleCapture(self.time));
        }
        if (s.t - self.time).abs() > CAPTURE_TOL {
            return Err(Error::CaptureTimeMismatch {
                state_time: s.t,
                event_time: self.time,
            });
        }
        if self.joint >= s.n() {
            return Err(Error::DimensionMismatch(format!(
                "joint index {} out of range for {} coordinates",
                self.joint + 1,
                s.n()
            )));
        }
        Ok(LockEvent {
            time: self.time,
            joint: self.joint,
            lock_value: Some(s.q[self.joint]),
        })
    }
}

/// Active constraints of one phase: a selector Jacobian with one row per
/// locked joint (in locking order) and the captured lock values.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConstraints {
    jacobian: DMatrix<f64>,
    h_values: DVector<f64>,
    locked: Vec<usize>,
}

impl PhaseConstraints {
    pub fn empty(n: usize) -> Self {
        Self {
            jacobian: DMatrix::zeros(0, n),
            h_values: DVector::zeros(0),
            locked: Vec::new(),
        }
    }

    /// Builds selector constraints for `(joint, value)` pairs in locking order.
    pub fn from_locks(n: usize, locks: &[(usize, f64)]) -> Result<Self> {
        let mut jacobian = DMatrix::zeros(locks.len(), n);
        let mut locked = Vec::with_capacity(locks.len());
        for (row, &(joint, _)) in locks.iter().enumerate() {
            if joint >= n {
                return Err(Error::DimensionMismatch(format!(
                    "joint index {} out of range for {} coordinates",
                    joint + 1,
                    n
                )));
            }
            jacobian[(row, joint)] = 1.0;
            locked.push(joint);
        }
        Ok(Self {
            jacobian,
            h_values: DVector::from_iterator(locks.len(), locks.iter().map(|&(_, v)| v)),
            locked,
        })
    }

    pub fn m(&self) -> usize {
        self.locked.len()
    }

    pub fn n(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn lock_values(&self) -> &DVector<f64> {
        &self.h_values
    }

    /// Locked joint indices in locking order.
    pub fn locked_joints(&self) -> &[usize] {
        &self.locked
    }

    /// Geometric constraint residual h(q) = J q - h.
    pub fn geometric_residual(&self, q: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * q - &self.h_values
    }

    /// Velocity constraint residual J qd.
    pub fn velocity_residual(&self, qd: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * qd
    }
}

/// Ordered lock events over an n-coordinate chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSchedule {
    events: Vec<LockEvent>,
    n: usize,
}

impl ConstraintSchedule {
    /// Validates ordering and joint uniqueness. Constraint removal has no
    /// representation here, so schedules are activation-only by construction.
    pub fn new(n: usize, events: Vec<LockEvent>) -> Result<Self> {
        let mut last_time = f64::NEG_INFINITY;
        let mut seen = vec![false; n];
        for ev in &events {
            if !ev.time.is_finite() {
                return Err(Error::InvalidSchedule("event time must be finite".into()));
            }
            if ev.time <= last_time {
                return Err(Error::InvalidSchedule(format!(
                    "event times must be strictly increasing (offending time {})",
                    ev.time
                )));
            }
            last_time = ev.time;
            if ev.joint >= n {
                return Err(Error::InvalidSchedule(format!(
                    "joint index {} out of range for {} coordinates",
                    ev.joint + 1,
                    n
                )));
            }
            if seen[ev.joint] {
                return Err(Error::InvalidSchedule(format!(
                    "joint {} locked twice",
                    ev.joint + 1
                )));
            }
            seen[ev.joint] = true;
        }
        Ok(Self { events, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn events(&self) -> &[LockEvent] {
        &self.events
    }

    /// Stores the lock value captured from `s` on event `index`.
    pub fn capture(&mut self, index: usize, s: &State) -> Result<()> {
        let ev = self
            .events
            .get(index)
            .ok_or_else(|| Error::InvalidSchedule(format!("no event with index {}", index)))?;
        self.events[index] = ev.captured(s)?;
        Ok(())
    }

    /// Constraints of the phase containing `t`. The phase switches at event
    /// times, right-continuously.
    pub fn active_constraints_at(&self, t: f64) -> Result<PhaseConstraints> {
        let mut locks = Vec::new();
        for ev in self.events.iter().take_while(|ev| ev.time <= t) {
            let value = ev.lock_value.ok_or(Error::UncapturedEvent(ev.time))?;
            locks.push((ev.joint, value));
        }
        PhaseConstraints::from_locks(self.n, &locks)
    }

    /// Splits the constraints around event `index` into the persistent rows J1
    /// (active before the event) and the rows J2 added by the event.
    pub fn split_at_event(&self, index: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let ev = self
            .events
            .get(index)
            .ok_or_else(|| Error::InvalidSchedule(format!("no event with index {}", index)))?;
        let mut j1 = DMatrix::zeros(index, self.n);
        for (row, prior) in self.events[..index].iter().enumerate() {
            j1[(row, prior.joint)] = 1.0;
        }
        let mut j2 = DMatrix::zeros(1, self.n);
        j2[(0, ev.joint)] = 1.0;
        Ok((j1, j2))
    }
}

/// Rank report for the regularity assumptions at a switching event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegularityReport {
    pub rank_j1: usize,
    pub rank_j2: usize,
    pub rank_stacked: usize,
    pub m1: usize,
    pub m2: usize,
    pub ok: bool,
}

/// Checks that J1 and J2 have full row rank individually and stacked, i.e.
/// that the persistent and added constraint sets are non-redundant and
/// algebraically independent at the event configuration.
pub fn validate_regularity(
    j1: &DMatrix<f64>,
    j2: &DMatrix<f64>,
    mass: &DMatrix<f64>,
) -> Result<RegularityReport> {
    let n = mass.ncols();
    if mass.nrows() != n || j1.ncols() != n || j2.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "J1 {}x{}, J2 {}x{}, M {}x{}",
            j1.nrows(),
            j1.ncols(),
            j2.nrows(),
            j2.ncols(),
            mass.nrows(),
            mass.ncols()
        )));
    }
    let m1 = j1.nrows();
    let m2 = j2.nrows();
    let mut stacked = DMatrix::zeros(m1 + m2, n);
    stacked.rows_mut(0, m1).copy_from(j1);
    stacked.rows_mut(m1, m2).copy_from(j2);

    let rank_j1 = numerical_rank(j1);
    let rank_j2 = numerical_rank(j2);
    let rank_stacked = numerical_rank(&stacked);
    Ok(RegularityReport {
        rank_j1,
        rank_j2,
        rank_stacked,
        m1,
        m2,
        ok: rank_j1 == m1 && rank_j2 == m2 && rank_stacked == m1 + m2,
    })
}

/// Rank by singular values, with threshold sigma_max * n * eps * 1e3.
fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    let tol = sigma_max * m.ncols() as f64 * f64::EPSILON * 1e3;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}
