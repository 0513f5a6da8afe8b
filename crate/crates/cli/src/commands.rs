//! The run, compare and validate commands.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use vtm_core::{run_scenario, validate_regularity, Trajectory, TransitionMethod};

use crate::csv_io::write_trajectory_file;
use crate::error::{CliError, Result};
use crate::scenario::Scenario;

/// Momentum jumps above this are flagged as inconsistent transitions.
pub const MOMENTUM_TOL: f64 = 1e-8;

/// Gate for trajectory agreement between consistent transition methods.
pub const COMPARE_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct EventSummary {
    pub time: f64,
    /// 1-based joint index, matching the scenario file.
    pub joint: usize,
    pub lock_value: f64,
    pub kinetic_drop: f64,
    pub impulse: Vec<f64>,
    pub momentum_jump: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub events: Vec<EventSummary>,
    /// Relative total-energy drift within each smooth phase.
    pub phase_energy_drift: Vec<f64>,
    pub max_constraint_drift: f64,
    pub max_momentum_jump: f64,
    pub momentum_consistent: bool,
    pub rows: usize,
    pub wall_seconds: f64,
}

impl RunSummary {
    fn from_trajectory(traj: &Trajectory, wall_seconds: f64) -> Self {
        let events = traj
            .events
            .iter()
            .map(|ev| EventSummary {
                time: ev.time,
                joint: ev.joint + 1,
                lock_value: ev.lock_value,
                kinetic_drop: ev.kinetic_drop,
                impulse: ev.impulse.iter().copied().collect(),
                momentum_jump: ev.momentum_jump,
            })
            .collect::<Vec<_>>();

        let mut phase_energy_drift = Vec::new();
        let mut phase: Option<(usize, f64, f64)> = None; // free count, baseline, max drift
        let mut max_constraint_drift: f64 = 0.0;
        for row in &traj.rows {
            max_constraint_drift = max_constraint_drift.max(row.drift);
            let free = row.free_joints.len();
            match &mut phase {
                Some((f, e0, drift)) if *f == free => {
                    *drift = drift.max((row.total - *e0).abs() / e0.abs().max(1.0));
                }
                _ => {
                    if let Some((_, _, drift)) = phase.take() {
                        phase_energy_drift.push(drift);
                    }
                    phase = Some((free, row.total, 0.0));
                }
            }
        }
        if let Some((_, _, drift)) = phase {
            phase_energy_drift.push(drift);
        }

        let max_momentum_jump = events.iter().map(|e| e.momentum_jump).fold(0.0, f64::max);
        RunSummary {
            momentum_consistent: max_momentum_jump <= MOMENTUM_TOL,
            max_momentum_jump,
            events,
            phase_energy_drift,
            max_constraint_drift,
            rows: traj.rows.len(),
            wall_seconds,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&format!(
                "event t = {:.6} s: joint {} locked at {:+.6} rad, kinetic drop {:.6e} J, impulse [{}] N m s, momentum jump {:.3e}\n",
                ev.time,
                ev.joint,
                ev.lock_value,
                ev.kinetic_drop,
                ev.impulse
                    .iter()
                    .map(|v| format!("{:+.6e}", v))
                    .collect::<Vec<_>>()
                    .join(", "),
                ev.momentum_jump,
            ));
        }
        if self.events.is_empty() {
            out.push_str("no events\n");
        }
        for (i, drift) in self.phase_energy_drift.iter().enumerate() {
            out.push_str(&format!("phase {} energy drift: {:.3e} (relative)\n", i + 1, drift));
        }
        out.push_str(&format!("max constraint drift: {:.3e}\n", self.max_constraint_drift));
        if self.events.is_empty() {
            out.push_str("momentum consistency: n/a (no events)\n");
        } else if self.momentum_consistent {
            out.push_str(&format!(
                "momentum consistency: ok (max jump {:.3e})\n",
                self.max_momentum_jump
            ));
        } else {
            out.push_str(&format!(
                "momentum consistency: VIOLATED (max jump {:.3e} > {:.0e})\n",
                self.max_momentum_jump, MOMENTUM_TOL
            ));
        }
        out.push_str(&format!("rows: {}, wall time: {:.3} s\n", self.rows, self.wall_seconds));
        out
    }
}

fn execute(scenario: &Scenario, transition: Option<TransitionMethod>) -> Result<(Trajectory, f64)> {
    let model = scenario.chain_model()?;
    let schedule = scenario.schedule()?;
    let s0 = scenario.initial_state()?;
    let mut config = scenario.run_config()?;
    if let Some(method) = transition {
        config.transition = method;
    }
    let start = Instant::now();
    let traj = run_scenario(&model, &vtm_core::ForceLaw::zero(), &schedule, &s0, &config)?;
    Ok((traj, start.elapsed().as_secs_f64()))
}

/// Runs the scenario and writes the trajectory CSV.
pub fn cmd_run(scenario: &Scenario, out_path: &Path) -> Result<RunSummary> {
    let (traj, wall) = execute(scenario, None)?;
    write_trajectory_file(out_path, &traj)?;
    Ok(RunSummary::from_trajectory(&traj, wall))
}

#[derive(Debug, Clone)]
pub struct PairDeviation {
    pub a: TransitionMethod,
    pub b: TransitionMethod,
    pub deviation: f64,
    /// Whether this pair takes part in the agreement gate.
    pub gated: bool,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub methods: Vec<TransitionMethod>,
    pub pairs: Vec<PairDeviation>,
    pub max_gated_deviation: f64,
    pub ok: bool,
}

impl CompareReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for pair in &self.pairs {
            out.push_str(&format!(
                "{} vs {}: max trajectory deviation {:.3e}{}\n",
                pair.a,
                pair.b,
                pair.deviation,
                if pair.gated { "" } else { " (not gated)" }
            ));
        }
        out.push_str(&format!(
            "gate: consistent methods agree within {:.0e}: {}\n",
            COMPARE_TOL,
            if self.ok { "ok" } else { "FAILED" }
        ));
        out
    }
}

fn trajectory_deviation(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.rows.len() != b.rows.len() {
        return Err(CliError::Numerical(format!(
            "trajectories have {} and {} rows and cannot be compared",
            a.rows.len(),
            b.rows.len()
        )));
    }
    Ok(a.rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| (&ra.q - &rb.q).amax().max((&ra.qd - &rb.qd).amax()))
        .fold(0.0, f64::max))
}

fn compare_parallelism(methods: usize) -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("VTM_SIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(available);
    cap.min(methods).max(1)
}

/// Runs the scenario once per transition method (in parallel, capped by
/// VTM_SIM_THREADS), writes one CSV per method into `out_dir` and reports the
/// maximum pairwise trajectory deviation. Pairs involving the naive method
/// are reported but exempt from the agreement gate.
pub fn cmd_compare(
    scenario: &Scenario,
    methods: &[TransitionMethod],
    out_dir: &Path,
) -> Result<CompareReport> {
    if methods.len() < 2 {
        return Err(CliError::Validation(
            "compare needs at least two transition methods".into(),
        ));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(CliError::Validation(format!(
                "transition method '{}' listed twice",
                m
            )));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let workers = compare_parallelism(methods.len());
    let results: Vec<Mutex<Option<Result<Trajectory>>>> =
        methods.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= methods.len() {
                    break;
                }
                let outcome = execute(scenario, Some(methods[idx])).map(|(traj, _)| traj);
                *results[idx].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut trajectories = Vec::with_capacity(methods.len());
    for (method, slot) in methods.iter().zip(results) {
        let traj = slot.into_inner().unwrap().expect("worker finished")?;
        write_trajectory_file(&out_dir.join(format!("{}.csv", method)), &traj)?;
        trajectories.push(traj);
    }

    let mut pairs = Vec::new();
    let mut max_gated: f64 = 0.0;
    for i in 0..methods.len() {
        for j in (i + 1)..methods.len() {
            let deviation = trajectory_deviation(&trajectories[i], &trajectories[j])?;
            let gated = methods[i].is_consistent() && methods[j].is_consistent();
            if gated {
                max_gated = max_gated.max(deviation);
            }
            pairs.push(PairDeviation {
                a: methods[i],
                b: methods[j],
                deviation,
                gated,
            });
        }
    }
    Ok(CompareReport {
        methods: methods.to_vec(),
        pairs,
        max_gated_deviation: max_gated,
        ok: max_gated <= COMPARE_TOL,
    })
}

#[derive(Debug, Clone)]
pub struct EventRankReport {
    pub time: f64,
    /// 1-based joint index.
    pub joint: usize,
    pub rank_j1: usize,
    pub rank_j2: usize,
    pub rank_stacked: usize,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct ValidateReport {
    pub events: Vec<EventRankReport>,
    pub ok: bool,
}

impl ValidateReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&format!(
                "event t = {:.6} s (joint {}): ranks J1 = {}, J2 = {}, stacked = {} -> {}\n",
                ev.time,
                ev.joint,
                ev.rank_j1,
                ev.rank_j2,
                ev.rank_stacked,
                if ev.ok { "ok" } else { "RANK FAILURE" }
            ));
        }
        out.push_str(&format!(
            "schedule regularity: {}\n",
            if self.ok { "ok" } else { "FAILED" }
        ));
        out
    }
}

/// Dry-runs the regularity checks of every event against the mass matrix at
/// the initial configuration.
pub fn cmd_validate(scenario: &Scenario) -> Result<ValidateReport> {
    let model = scenario.chain_model()?;
    let schedule = scenario.schedule()?;
    let s0 = scenario.initial_state()?;
    let mass = model.mass_matrix(&s0.q)?;

    let mut reports = Vec::new();
    let mut all_ok = true;
    for (idx, ev) in schedule.events().iter().enumerate() {
        let (j1, j2) = schedule.split_at_event(idx)?;
        let report = validate_regularity(&j1, &j2, &mass)?;
        all_ok &= report.ok;
        reports.push(EventRankReport {
            time: ev.time,
            joint: ev.joint + 1,
            rank_j1: report.rank_j1,
            rank_j2: report.rank_j2,
            rank_stacked: report.rank_stacked,
            ok: report.ok,
        });
    }
    Ok(ValidateReport {
        events: reports,
        ok: all_ok,
    })
}
