//! Forward dynamics of planar revolute chains whose topology changes at
//! scheduled joint-locking events.
//!
//! The crate provides the closed-form chain dynamics ([`chain_model`]), the
//! piecewise constraint representation for successive locking
//! ([`constraint_schedule`]), the projection and reduction kernels shared by
//! all formulations ([`projection_kernels`]), momentum-consistent transition
//! solvers for the velocity jump at an event ([`transition`]) and a
//! fixed-step event-driven integrator with per-step diagnostics
//! ([`simulate`]).

pub mod chain_model;
pub mod constraint_schedule;
pub mod error;
pub mod projection_kernels;
pub mod simulate;
pub mod transition;

pub use chain_model::{ChainModel, Energies, ForceLaw, LinkParams, State};
pub use constraint_schedule::{
    validate_regularity, ConstraintSchedule, LockEvent, PhaseConstraints, RegularityReport,
};
pub use error::{Error, Result};
pub use projection_kernels::{
    nullspace_projector, orthogonal_complement, reduced_system, weighted_pseudoinverse, Partition,
};
pub use simulate::{
    accel_index1, accel_projected, accel_voronets, diagnostics_row, rk4_step, run_scenario,
    EventRecord, Formulation, RunConfig, Trajectory, TrajectoryRow, TransitionMethod,
};
pub use transition::{
    naive_zeroing, solve_general, solve_minimal_voronets, solve_partitioned,
    solve_redundant_projected, TransitionInput, TransitionResult,
};
