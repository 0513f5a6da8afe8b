//! Fixed-step RK4 integration of the constrained chain with scheduled joint
//! locking.
//!
//! Between events the equations of motion can be evaluated in three
//! formulations (index-1 DAE, projected ODE, Voronets minimal coordinates);
//! all three drive the same reduced integration state in which locked
//! coordinates are removed and held at their captured values, so the geometric
//! locking constraints are satisfied exactly. At each event, the scheduled
//! lock is captured from the running state, the regularity of the constraint
//! update is validated, and the configured transition solver supplies the
//! post-event velocity.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::chain_model::{ChainModel, ForceLaw, State};
use crate::constraint_schedule::{validate_regularity, ConstraintSchedule, PhaseConstraints};
use crate::error::{Error, Result};
use crate::projection_kernels::{nullspace_projector, orthogonal_complement, reduced_system, Partition};
use crate::transition::{
    naive_zeroing, solve_general, solve_minimal_voronets, solve_partitioned,
    solve_redundant_projected, TransitionInput,
};

/// Tolerance for an event time to count as a grid node.
const EVENT_GRID_TOL: f64 = 1e-12;

/// Formulation of the constrained equations of motion between events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    /// Bordered mass-matrix system solved for accelerations and multipliers.
    Index1Dae,
    /// Multiplier-free projection through the weighted null-space projector.
    ProjectedOde,
    /// Reduced equations in the independent coordinates.
    VoronetsMinimal,
}

impl Formulation {
    pub const ALL: [Formulation; 3] = [
        Formulation::Index1Dae,
        Formulation::ProjectedOde,
        Formulation::VoronetsMinimal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Formulation::Index1Dae => "index1",
            Formulation::ProjectedOde => "projected",
            Formulation::VoronetsMinimal => "voronets",
        }
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "index1" | "index1_dae" => Ok(Formulation::Index1Dae),
            "projected" | "projected_ode" => Ok(Formulation::ProjectedOde),
            "voronets" | "voronets_minimal" => Ok(Formulation::VoronetsMinimal),
            other => Err(Error::InvalidSchedule(format!(
                "unknown formulation tag '{}' (expected index1, projected or voronets)",
                other
            ))),
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Transition solver invoked at constraint activation events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionMethod {
    General,
    Partitioned,
    Redundant,
    Minimal,
    /// Inconsistent control experiment: zero the newly locked rates.
    Naive,
}

impl TransitionMethod {
    pub const CONSISTENT: [TransitionMethod; 4] = [
        TransitionMethod::General,
        TransitionMethod::Partitioned,
        TransitionMethod::Redundant,
        TransitionMethod::Minimal,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TransitionMethod::General => "general",
            TransitionMethod::Partitioned => "partitioned",
            TransitionMethod::Redundant => "redundant",
            TransitionMethod::Minimal => "minimal",
            TransitionMethod::Naive => "naive",
        }
    }

    /// Whether this method preserves the momentum of the free directions.
    pub fn is_consistent(&self) -> bool {
        !matches!(self, TransitionMethod::Naive)
    }
}

impl FromStr for TransitionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(TransitionMethod::General),
            "partitioned" => Ok(TransitionMethod::Partitioned),
            "redundant" => Ok(TransitionMethod::Redundant),
            "minimal" => Ok(TransitionMethod::Minimal),
            "naive" => Ok(TransitionMethod::Naive),
            other => Err(Error::InvalidSchedule(format!(
                "unknown transition tag '{}' (expected general, partitioned, redundant, minimal or naive)",
                other
            ))),
        }
    }
}

impl fmt::Display for TransitionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sampled diagnostics row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    /// Free (unlocked) joints in ascending order; momentum entries align with
    /// this list.
    pub free_joints: Vec<usize>,
    /// Generalized momentum F^T M qd of the free directions.
    pub momentum: DVector<f64>,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    /// max(|h(q)|, |J qd|) over the active constraints.
    pub drift: f64,
    pub event: bool,
}

/// Transition record of one lock event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    /// Zero-based index of the locked joint.
    pub joint: usize,
    pub lock_value: f64,
    pub qd_minus: DVector<f64>,
    pub qd_plus: DVector<f64>,
    /// Impulse of the activated constraint rows.
    pub impulse: DVector<f64>,
    pub kinetic_drop: f64,
    /// Largest jump of a free-direction momentum component across the event.
    pub momentum_jump: f64,
}

/// Sampled run with its event records.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub rows: Vec<TrajectoryRow>,
    pub events: Vec<EventRecord>,
}

/// Integration parameters of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub t_end: f64,
    pub dt: f64,
    pub formulation: Formulation,
    pub transition: TransitionMethod,
    /// Emit a diagnostics row every this many steps (events are always
    /// sampled).
    pub sample_stride: usize,
    /// Optional applied impulse per scheduled event, aligned with the
    /// schedule; empty means zero everywhere.
    pub event_impulses: Vec<Option<DVector<f64>>>,
}

impl RunConfig {
    pub fn new(t_end: f64, dt: f64, formulation: Formulation, transition: TransitionMethod) -> Self {
        Self {
            t_end,
            dt,
            formulation,
            transition,
            sample_stride: 10,
            event_impulses: Vec::new(),
        }
    }
}

/// Accelerations and multipliers from the bordered index-1 system
/// [[M, J^T], [J, 0]] (qdd; lambda) = (u - C qd - P - Q; -Jdot qd).
pub fn accel_index1(
    model: &ChainModel,
    forces: &ForceLaw,
    phase: &PhaseConstraints,
    s: &State,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = model.n();
    let m = phase.m();
    if m == 0 {
        return Ok((model.unconstrained_accel(forces, s)?, DVector::zeros(0)));
    }
    let mass = model.mass_matrix(&s.q)?;
    let bias = model.bias_force(forces, s)?;
    let j = phase.jacobian();

    let mut a = DMatrix::zeros(n + m, n + m);
    a.view_mut((0, 0), (n, n)).copy_from(&mass);
    a.view_mut((0, n), (n, m)).copy_from(&j.transpose());
    a.view_mut((n, 0), (m, n)).copy_from(j);

    let mut b = DVector::zeros(n + m);
    b.rows_mut(0, n).copy_from(&bias);
    // locking constraints have a constant Jacobian, so the Jdot qd term is
    // identically zero

    let x = crate::projection_kernels::solve_dense_refined(&a, &b)
        .ok_or_else(|| Error::RankDeficient("index-1 coefficient matrix is singular".into()))?;
    Ok((x.rows(0, n).clone_owned(), x.rows(n, m).clone_owned()))
}

/// Accelerations from the projected equations:
/// qdd = M^-1 N^T (u - C qd - P - Q), with the Jdot qd correction vanishing
/// for locking constraints.
pub fn accel_projected(
    model: &ChainModel,
    forces: &ForceLaw,
    phase: &PhaseConstraints,
    s: &State,
) -> Result<DVector<f64>> {
    if phase.m() == 0 {
        return model.unconstrained_accel(forces, s);
    }
    let mass = model.mass_matrix(&s.q)?;
    let bias = model.bias_force(forces, s)?;
    let n_proj = nullspace_projector(phase.jacobian(), &mass)?;
    let chol = mass
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&(n_proj.transpose() * bias)))
}

/// Independent accelerations from the reduced equations
/// Mbar sdd = F^T (u - C qd - P - Q).
pub fn accel_voronets(
    model: &ChainModel,
    forces: &ForceLaw,
    phase: &PhaseConstraints,
    part: &Partition,
    s: &State,
) -> Result<DVector<f64>> {
    let mass = model.mass_matrix(&s.q)?;
    let f = orthogonal_complement(phase.jacobian(), part)?;
    let coriolis = model.coriolis_vector(&s.q, &s.qd)?;
    let potential = model.gravity_vector(&s.q)?;
    let u = forces.applied(&s.q, &s.qd, s.t);
    let q_force = forces.other(&s.q, &s.qd, s.t);
    // F is constant for locking constraints, so the Fdot sdot term vanishes.
    let fdot_sdot = DVector::zeros(model.n());
    let (mbar, rhs) = reduced_system(&f, &mass, &coriolis, &potential, &q_force, &u, &fdot_sdot)?;
    let chol = mbar
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("reduced mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// One classical RK4 step of the second-order system qdd = accel(t, q, qd).
pub fn rk4_step<F>(accel: F, s: &State, dt: f64) -> Result<State>
where
    F: Fn(&State) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidSchedule(format!("step size must be positive, got {}", dt)));
    }
    let eval = |t: f64, q: DVector<f64>, qd: DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let stage = State { t, q, qd };
        let a = accel(&stage)?;
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState(t));
        }
        Ok((stage.qd, a))
    };

    let half = 0.5 * dt;
    let (k1q, k1v) = eval(s.t, s.q.clone(), s.qd.clone())?;
    let (k2q, k2v) = eval(s.t + half, &s.q + half * &k1q, &s.qd + half * &k1v)?;
    let (k3q, k3v) = eval(s.t + half, &s.q + half * &k2q, &s.qd + half * &k2v)?;
    let (k4q, k4v) = eval(s.t + dt, &s.q + dt * &k3q, &s.qd + dt * &k3v)?;

    let sixth = dt / 6.0;
    Ok(State {
        t: s.t + dt,
        q: &s.q + sixth * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
        qd: &s.qd + sixth * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    })
}

/// Active-phase context: constraints, the locking partition and its constant
/// orthogonal complement.
struct PhaseCtx {
    phase: PhaseConstraints,
    part: Partition,
    complement: DMatrix<f64>,
}

impl PhaseCtx {
    fn new(n: usize, locks: &[(usize, f64)]) -> Result<Self> {
        let phase = PhaseConstraints::from_locks(n, locks)?;
        let part = Partition::for_locked_joints(phase.locked_joints(), n)?;
        let complement = orthogonal_complement(phase.jacobian(), &part)?;
        Ok(Self {
            phase,
            part,
            complement,
        })
    }

    fn free(&self) -> &[usize] {
        self.part.independent()
    }

    /// Full coordinates from the reduced ones plus the captured lock values.
    fn lift(&self, n: usize, reduced: &DVector<f64>, locked_values: bool) -> DVector<f64> {
        let mut full = DVector::zeros(n);
        for (i, &joint) in self.free().iter().enumerate() {
            full[joint] = reduced[i];
        }
        if locked_values {
            for (row, &joint) in self.phase.locked_joints().iter().enumerate() {
                full[joint] = self.phase.lock_values()[row];
            }
        }
        full
    }

    fn reduce(&self, full: &DVector<f64>) -> DVector<f64> {
        self.part.select_independent(full)
    }

    /// Independent accelerations under the requested formulation, evaluated on
    /// the lifted full state.
    fn reduced_accel(
        &self,
        model: &ChainModel,
        forces: &ForceLaw,
        formulation: Formulation,
        reduced: &State,
    ) -> Result<DVector<f64>> {
        let n = model.n();
        let full = State {
            t: reduced.t,
            q: self.lift(n, &reduced.q, true),
            qd: self.lift(n, &reduced.qd, false),
        };
        match formulation {
            Formulation::Index1Dae => {
                let (qdd, _) = accel_index1(model, forces, &self.phase, &full)?;
                Ok(self.reduce(&qdd))
            }
            Formulation::ProjectedOde => {
                let qdd = accel_projected(model, forces, &self.phase, &full)?;
                Ok(self.reduce(&qdd))
            }
            Formulation::VoronetsMinimal => accel_voronets(model, forces, &self.phase, &self.part, &full),
        }
    }

    fn row(&self, model: &ChainModel, s: &State, event: bool) -> Result<TrajectoryRow> {
        let mass = model.mass_matrix(&s.q)?;
        let momentum = self.complement.transpose() * (&mass * &s.qd);
        let energies = model.energies(s)?;
        let drift = if self.phase.m() == 0 {
            0.0
        } else {
            self.phase
                .geometric_residual(&s.q)
                .amax()
                .max(self.phase.velocity_residual(&s.qd).amax())
        };
        Ok(TrajectoryRow {
            t: s.t,
            q: s.q.clone(),
            qd: s.qd.clone(),
            free_joints: self.free().to_vec(),
            momentum,
            kinetic: energies.kinetic,
            potential: energies.potential,
            total: energies.total,
            drift,
            event,
        })
    }
}

/// Diagnostics row for an arbitrary state under the given phase: free-joint
/// momentum F^T M qd, energies and constraint drift.
pub fn diagnostics_row(
    model: &ChainModel,
    phase: &PhaseConstraints,
    part: &Partition,
    s: &State,
) -> Result<TrajectoryRow> {
    let complement = orthogonal_complement(phase.jacobian(), part)?;
    let ctx = PhaseCtx {
        phase: phase.clone(),
        part: part.clone(),
        complement,
    };
    ctx.row(model, s, false)
}

fn grid_index(time: f64, t0: f64, dt: f64) -> Result<usize> {
    let raw = (time - t0) / dt;
    let k = raw.round();
    if k < 0.0 || (t0 + k * dt - time).abs() > EVENT_GRID_TOL {
        return Err(Error::OffGridEvent {
            event_time: time,
            dt,
        });
    }
    Ok(k as usize)
}

/// Integrates the chain through its lock schedule.
///
/// Every event time must sit on the integration grid. At an event the running
/// lock value is captured, regularity is validated against the event-time
/// mass matrix, and the configured transition method provides the post-event
/// velocity. Locked coordinates are removed from the integrated state and
/// held exactly at their captured values. Diagnostics rows are appended on
/// the sample stride and as a pre/post pair at each event.
pub fn run_scenario(
    model: &ChainModel,
    forces: &ForceLaw,
    sched: &ConstraintSchedule,
    s0: &State,
    config: &RunConfig,
) -> Result<Trajectory> {
    let n = model.n();
    if sched.n() != n || s0.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "model has {} joints, schedule covers {}, state has {}",
            n,
            sched.n(),
            s0.n()
        )));
    }
    if !(config.dt > 0.0) {
        return Err(Error::InvalidSchedule("dt must be positive".into()));
    }
    if config.sample_stride == 0 {
        return Err(Error::InvalidSchedule("sample_stride must be at least 1".into()));
    }
    if !config.event_impulses.is_empty() && config.event_impulses.len() != sched.events().len() {
        return Err(Error::InvalidSchedule(format!(
            "{} event impulses supplied for {} events",
            config.event_impulses.len(),
            sched.events().len()
        )));
    }
    if !s0.is_finite() {
        return Err(Error::NonFiniteState(s0.t));
    }

    let t0 = s0.t;
    let dt = config.dt;
    let raw_steps = (config.t_end - t0) / dt;
    let steps = if (raw_steps.round() * dt - (config.t_end - t0)).abs() <= 1e-9 * config.t_end.abs().max(1.0)
    {
        raw_steps.round() as usize
    } else {
        raw_steps.floor().max(0.0) as usize
    };

    // Map grid steps to scheduled events.
    let mut event_step = vec![None; sched.events().len()];
    let mut last_step = None;
    for (idx, ev) in sched.events().iter().enumerate() {
        let k = grid_index(ev.time, t0, dt)?;
        if k > steps {
            return Err(Error::InvalidSchedule(format!(
                "event at t = {} lies beyond t_end = {}",
                ev.time, config.t_end
            )));
        }
        if last_step == Some(k) {
            return Err(Error::InvalidSchedule(format!(
                "two events fall on the same grid node t = {}",
                ev.time
            )));
        }
        last_step = Some(k);
        event_step[idx] = Some(k);
    }

    let mut schedule = sched.clone();
    let mut ctx = PhaseCtx::new(n, &[])?;
    let mut locks: Vec<(usize, f64)> = Vec::new();
    let mut reduced = State {
        t: t0,
        q: ctx.reduce(&s0.q),
        qd: ctx.reduce(&s0.qd),
    };
    let mut next_event = 0;

    let mut rows = Vec::new();
    let mut events_out = Vec::new();

    for k in 0..=steps {
        let t = t0 + k as f64 * dt;
        if k > 0 {
            reduced = rk4_step(
                |stage| ctx.reduced_accel(model, forces, config.formulation, stage),
                &reduced,
                dt,
            )?;
            reduced.t = t;
            if !reduced.is_finite() {
                return Err(Error::NonFiniteState(t));
            }
        }

        let is_event = next_event < schedule.events().len() && event_step[next_event] == Some(k);
        if is_event {
            let full = State {
                t,
                q: ctx.lift(n, &reduced.q, true),
                qd: ctx.lift(n, &reduced.qd, false),
            };
            rows.push(ctx.row(model, &full, true)?);

            // capture the lock angle, or check a preset one against the
            // running state (the configuration must satisfy the activated
            // constraint)
            match schedule.events()[next_event].lock_value {
                None => schedule.capture(next_event, &full)?,
                Some(preset) => {
                    let joint = schedule.events()[next_event].joint;
                    if (preset - full.q[joint]).abs() > 1e-9 {
                        return Err(Error::InvalidSchedule(format!(
                            "preset lock value {} for joint {} does not match the running angle {} at t = {}",
                            preset,
                            joint + 1,
                            full.q[joint],
                            t
                        )));
                    }
                }
            }
            let (j1, j2) = schedule.split_at_event(next_event)?;
            let mass = model.mass_matrix(&full.q)?;
            let report = validate_regularity(&j1, &j2, &mass)?;
            if !report.ok {
                return Err(Error::Regularity {
                    time: t,
                    rank_j1: report.rank_j1,
                    rank_j2: report.rank_j2,
                    rank_stacked: report.rank_stacked,
                    m1: report.m1,
                    m2: report.m2,
                });
            }

            let mut input = TransitionInput::new(mass.clone(), j1, j2, full.qd.clone())?;
            if let Some(Some(u)) = config.event_impulses.get(next_event) {
                input = input.with_impulse(u.clone())?;
            }
            let result = match config.transition {
                TransitionMethod::General => solve_general(&input)?,
                TransitionMethod::Partitioned => solve_partitioned(&input)?,
                TransitionMethod::Redundant => solve_redundant_projected(&input)?,
                TransitionMethod::Minimal => solve_minimal_voronets(&input, &ctx.complement)?,
                TransitionMethod::Naive => naive_zeroing(&input)?,
            };

            let ev = &schedule.events()[next_event];
            let lock_value = ev.lock_value.expect("captured above");
            locks.push((ev.joint, lock_value));
            let joint = ev.joint;
            ctx = PhaseCtx::new(n, &locks)?;

            // momentum of the post-event free directions, before and after
            let p_minus = ctx.complement.transpose() * (&mass * &full.qd);
            let p_plus = ctx.complement.transpose() * (&mass * &result.qd_plus);
            let momentum_jump = (&p_plus - &p_minus).amax();

            events_out.push(EventRecord {
                time: t,
                joint,
                lock_value,
                qd_minus: full.qd.clone(),
                qd_plus: result.qd_plus.clone(),
                impulse: result.impulse.clone(),
                kinetic_drop: result.kinetic_drop,
                momentum_jump,
            });

            reduced = State {
                t,
                q: ctx.reduce(&full.q),
                qd: ctx.reduce(&result.qd_plus),
            };
            next_event += 1;

            let full_post = State {
                t,
                q: ctx.lift(n, &reduced.q, true),
                qd: ctx.lift(n, &reduced.qd, false),
            };
            rows.push(ctx.row(model, &full_post, true)?);
        } else if k % config.sample_stride == 0 || k == steps {
            let full = State {
                t,
                q: ctx.lift(n, &reduced.q, true),
                qd: ctx.lift(n, &reduced.qd, false),
            };
            rows.push(ctx.row(model, &full, false)?);
        }
    }

    Ok(Trajectory {
        n,
        rows,
        events: events_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_model::LinkParams;
    use crate::constraint_schedule::LockEvent;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solid_link() -> LinkParams {
        LinkParams {
            length: 1.0,
            mass: 108.0,
            com_offset: 0.5,
            inertia_com: 9.36,
        }
    }

    fn three_link_model() -> ChainModel {
        ChainModel::new(vec![solid_link(); 3], 9.81).unwrap()
    }

    fn random_locked_state(rng: &mut ChaCha8Rng, locked: &[usize], n: usize) -> State {
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
        let mut qd = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        for &j in locked {
            qd[j] = 0.0;
        }
        State::new(0.0, q, qd).unwrap()
    }

    #[test]
    fn unconstrained_phase_matches_free_dynamics() {
        let model = three_link_model();
        let forces = ForceLaw::zero();
        let phase = PhaseConstraints::empty(3);
        let s = State::new(
            0.0,
            DVector::from_vec(vec![0.4, -0.2, 0.9]),
            DVector::from_vec(vec![0.1, 0.3, -0.6]),
        )
        .unwrap();
        let free = model.unconstrained_accel(&forces, &s).unwrap();

        let (qdd, lambda) = accel_index1(&model, &forces, &phase, &s).unwrap();
        assert_eq!(lambda.len(), 0);
        assert_abs_diff_eq!(qdd, free, epsilon = 1e-12);

        let qdd = accel_projected(&model, &forces, &phase, &s).unwrap();
        assert_abs_diff_eq!(qdd, free, epsilon = 1e-12);

        let part = Partition::for_locked_joints(&[], 3).unwrap();
        let sdd = accel_voronets(&model, &forces, &phase, &part, &s).unwrap();
        assert_abs_diff_eq!(sdd, free, epsilon = 1e-12);
    }

    #[test]
    fn locked_joint_has_zero_acceleration() {
        let model = three_link_model();
        let forces = ForceLaw::zero();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let s = random_locked_state(&mut rng, &[1], 3);
        let phase = PhaseConstraints::from_locks(3, &[(1, s.q[1])]).unwrap();
        let (qdd, _) = accel_index1(&model, &forces, &phase, &s).unwrap();
        assert!(qdd[1].abs() <= 1e-12);
    }

    #[test]
    fn formulations_agree_on_random_locked_states() {
        let model = three_link_model();
        let forces = ForceLaw::zero();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..30 {
            let s = random_locked_state(&mut rng, &[1], 3);
            let phase = PhaseConstraints::from_locks(3, &[(1, s.q[1])]).unwrap();
            let part = Partition::for_locked_joints(&[1], 3).unwrap();

            let (qdd_dae, _) = accel_index1(&model, &forces, &phase, &s).unwrap();
            let qdd_proj = accel_projected(&model, &forces, &phase, &s).unwrap();
            assert!((&qdd_dae - &qdd_proj).amax() <= 1e-9);

            let sdd = accel_voronets(&model, &forces, &phase, &part, &s).unwrap();
            let f = orthogonal_complement(phase.jacobian(), &part).unwrap();
            let lifted = f * sdd;
            assert!((&qdd_dae - &lifted).amax() <= 1e-9);
        }
    }

    #[test]
    fn projected_equations_have_zero_residual() {
        let model = three_link_model();
        let forces = ForceLaw::zero();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let s = random_locked_state(&mut rng, &[2], 3);
            let phase = PhaseConstraints::from_locks(3, &[(2, s.q[2])]).unwrap();
            let qdd = accel_projected(&model, &forces, &phase, &s).unwrap();

            let mass = model.mass_matrix(&s.q).unwrap();
            let bias = model.bias_force(&forces, &s).unwrap();
            let n_proj = nullspace_projector(phase.jacobian(), &mass).unwrap();
            let residual = (n_proj.transpose() * (&mass * &qdd - &bias)).amax();
            assert!(residual <= 1e-9, "projected residual {}", residual);
        }
    }

    #[test]
    fn rk4_is_exact_for_linear_motion() {
        let s = State::new(
            0.0,
            DVector::from_vec(vec![1.0, -2.0]),
            DVector::from_vec(vec![0.5, 0.25]),
        )
        .unwrap();
        let next = rk4_step(|st| Ok(DVector::zeros(st.n())), &s, 0.125).unwrap();
        assert_eq!(next.q, &s.q + 0.125 * &s.qd);
        assert_eq!(next.qd, s.qd);
        assert_eq!(next.t, 0.125);
    }

    #[test]
    fn rk4_harmonic_oscillator_amplitude() {
        // one period of qdd = -q starting at (1, 0)
        let dt = 1e-3;
        let period = 2.0 * std::f64::consts::PI;
        let steps = (period / dt).round() as usize;
        let mut s = State::new(0.0, DVector::from_vec(vec![1.0]), DVector::zeros(1)).unwrap();
        for _ in 0..steps {
            s = rk4_step(|st| Ok(-st.q.clone()), &s, dt).unwrap();
        }
        // compare against the analytic state at the reached time
        let t_final = steps as f64 * dt;
        assert!((s.q[0] - t_final.cos()).abs() <= 1e-10);
        assert!((s.qd[0] + t_final.sin()).abs() <= 1e-10);
    }

    #[test]
    fn rk4_rejects_non_finite_derivative() {
        let s = State::new(0.0, DVector::zeros(1), DVector::zeros(1)).unwrap();
        let err = rk4_step(|_| Ok(DVector::from_vec(vec![f64::NAN])), &s, 0.1);
        assert!(matches!(err, Err(Error::NonFiniteState(_))));
    }

    #[test]
    fn conservative_run_preserves_energy() {
        let model = three_link_model();
        let sched = ConstraintSchedule::new(3, vec![]).unwrap();
        let s0 = State::new(
            0.0,
            DVector::from_element(3, std::f64::consts::FRAC_PI_6),
            DVector::zeros(3),
        )
        .unwrap();
        let config = RunConfig::new(2.0, 1e-4, Formulation::Index1Dae, TransitionMethod::General);
        let traj = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config).unwrap();

        assert!(traj.events.is_empty());
        let e0 = traj.rows[0].total;
        for row in &traj.rows {
            assert!((row.total - e0).abs() <= 1e-6 * e0.abs());
        }
    }

    #[test]
    fn locked_coordinates_are_held_exactly() {
        let model = three_link_model();
        let sched =
            ConstraintSchedule::new(3, vec![LockEvent::new(0.2, 1), LockEvent::new(0.4, 2)]).unwrap();
        let s0 = State::new(
            0.0,
            DVector::from_element(3, std::f64::consts::FRAC_PI_6),
            DVector::zeros(3),
        )
        .unwrap();
        let config = RunConfig::new(0.6, 1e-4, Formulation::VoronetsMinimal, TransitionMethod::Minimal);
        let traj = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config).unwrap();

        assert_eq!(traj.events.len(), 2);
        let lock1 = traj.events[0].lock_value;
        let lock2 = traj.events[1].lock_value;
        for row in traj.rows.iter().filter(|r| r.t > 0.4) {
            assert_eq!(row.q[1], lock1);
            assert_eq!(row.q[2], lock2);
            assert_eq!(row.qd[1], 0.0);
            assert_eq!(row.qd[2], 0.0);
            assert_eq!(row.drift, 0.0);
            assert_eq!(row.free_joints, vec![0]);
            assert_eq!(row.momentum.len(), 1);
        }
    }

    #[test]
    fn event_rows_come_in_pairs_with_continuous_momentum() {
        let model = three_link_model();
        let sched = ConstraintSchedule::new(3, vec![LockEvent::new(0.3, 1)]).unwrap();
        let s0 = State::new(
            0.0,
            DVector::from_element(3, std::f64::consts::FRAC_PI_6),
            DVector::zeros(3),
        )
        .unwrap();
        let config = RunConfig::new(0.5, 1e-4, Formulation::Index1Dae, TransitionMethod::General);
        let traj = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config).unwrap();

        let pair: Vec<_> = traj.rows.iter().filter(|r| r.event).collect();
        assert_eq!(pair.len(), 2);
        assert_eq!(pair[0].t, pair[1].t);
        // momentum of the post-event free directions is continuous
        let mass = model.mass_matrix(&pair[0].q).unwrap();
        let ev = &traj.events[0];
        let part = Partition::for_locked_joints(&[ev.joint], 3).unwrap();
        let phase = PhaseConstraints::from_locks(3, &[(ev.joint, ev.lock_value)]).unwrap();
        let f = orthogonal_complement(phase.jacobian(), &part).unwrap();
        let p_minus = f.transpose() * (&mass * &ev.qd_minus);
        let p_plus = f.transpose() * (&mass * &ev.qd_plus);
        assert!((p_plus - p_minus).amax() <= 1e-8);
        assert!(ev.momentum_jump <= 1e-8);
        assert!(ev.kinetic_drop >= 0.0);
    }

    #[test]
    fn naive_transition_breaks_momentum_continuity() {
        let model = three_link_model();
        let sched = ConstraintSchedule::new(3, vec![LockEvent::new(0.3, 1)]).unwrap();
        let s0 = State::new(
            0.0,
            DVector::from_element(3, std::f64::consts::FRAC_PI_6),
            DVector::zeros(3),
        )
        .unwrap();
        let config = RunConfig::new(0.5, 1e-4, Formulation::Index1Dae, TransitionMethod::Naive);
        let traj = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config).unwrap();
        assert!(traj.events[0].momentum_jump > 1e-3);
    }

    #[test]
    fn identical_inputs_give_bit_identical_trajectories() {
        let model = three_link_model();
        let sched = ConstraintSchedule::new(3, vec![LockEvent::new(0.25, 2)]).unwrap();
        let s0 = State::new(
            0.0,
            DVector::from_element(3, std::f64::consts::FRAC_PI_6),
            DVector::zeros(3),
        )
        .unwrap();
        let config = RunConfig::new(0.5, 1e-4, Formulation::ProjectedOde, TransitionMethod::Redundant);
        let a = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config).unwrap();
        let b = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn preset_lock_value_must_match_the_running_angle() {
        let model = three_link_model();
        let s0 = State::new(
            0.0,
            DVector::from_element(3, std::f64::consts::FRAC_PI_6),
            DVector::zeros(3),
        )
        .unwrap();
        let config = RunConfig::new(0.4, 1e-4, Formulation::Index1Dae, TransitionMethod::General);

        // capture the natural angle first
        let sched = ConstraintSchedule::new(3, vec![LockEvent::new(0.2, 1)]).unwrap();
        let reference = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config).unwrap();
        let natural = reference.events[0].lock_value;

        // presetting that angle reproduces the run
        let preset_ev = LockEvent {
            time: 0.2,
            joint: 1,
            lock_value: Some(natural),
        };
        let sched = ConstraintSchedule::new(3, vec![preset_ev]).unwrap();
        let preset_run = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config).unwrap();
        assert_eq!(preset_run, reference);

        // presetting anything else is rejected
        let bad_ev = LockEvent {
            time: 0.2,
            joint: 1,
            lock_value: Some(natural + 0.1),
        };
        let sched = ConstraintSchedule::new(3, vec![bad_ev]).unwrap();
        let err = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config);
        assert!(matches!(err, Err(Error::InvalidSchedule(_))));
    }

    #[test]
    fn off_grid_event_is_rejected() {
        let model = three_link_model();
        let sched = ConstraintSchedule::new(3, vec![LockEvent::new(0.85001, 1)]).unwrap();
        let s0 = State::new(0.0, DVector::zeros(3), DVector::zeros(3)).unwrap();
        let config = RunConfig::new(1.0, 1e-4, Formulation::Index1Dae, TransitionMethod::General);
        let err = run_scenario(&model, &ForceLaw::zero(), &sched, &s0, &config);
        assert!(matches!(err, Err(Error::OffGridEvent { .. })));
    }

    #[test]
    fn diagnostics_row_reports_full_momentum_without_constraints() {
        let model = three_link_model();
        let phase = PhaseConstraints::empty(3);
        let part = Partition::for_locked_joints(&[], 3).unwrap();
        let s = State::new(
            0.0,
            DVector::from_vec(vec![0.1, 0.2, 0.3]),
            DVector::from_vec(vec![0.5, -0.2, 0.1]),
        )
        .unwrap();
        let row = diagnostics_row(&model, &phase, &part, &s).unwrap();
        let mass = model.mass_matrix(&s.q).unwrap();
        assert_abs_diff_eq!(row.momentum, &mass * &s.qd, epsilon = 1e-12);
        assert_eq!(row.free_joints, vec![0, 1, 2]);
        assert_eq!(row.drift, 0.0);
    }

    #[test]
    fn tags_round_trip() {
        for f in Formulation::ALL {
            assert_eq!(f.as_str().parse::<Formulation>().unwrap(), f);
        }
        for m in TransitionMethod::CONSISTENT {
            assert_eq!(m.as_str().parse::<TransitionMethod>().unwrap(), m);
        }
        assert_eq!("naive".parse::<TransitionMethod>().unwrap(), TransitionMethod::Naive);
        assert_eq!("index1_dae".parse::<Formulation>().unwrap(), Formulation::Index1Dae);
        assert!("rk4".parse::<Formulation>().is_err());
    }
}
