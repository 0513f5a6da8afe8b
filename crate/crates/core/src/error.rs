use thiserror::Error;

/// Errors produced by model construction, constraint handling and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("constraint system is rank deficient: {0}")]
    RankDeficient(String),

    #[error("invalid coordinate partition: {0}")]
    InvalidPartition(String),

    #[error("regularity check failed at event t = {time} (ranks {rank_j1}/{rank_j2}/{rank_stacked} for m1 = {m1}, m2 = {m2})")]
    Regularity {
        time: f64,
        rank_j1: usize,
        rank_j2: usize,
        rank_stacked: usize,
        m1: usize,
        m2: usize,
    },

    #[error("event at t = {event_time} is not on the integration grid (dt = {dt})")]
    OffGridEvent { event_time: f64, dt: f64 },

    #[error("event at t = {0} has no captured lock value")]
    UncapturedEvent(f64),

    #[error("capture time mismatch: state at t = {state_time}, event at t = {event_time}")]
    CaptureTimeMismatch { state_time: f64, event_time: f64 },

    #[error("lock value for event at t = {0} captured twice")]
    DoubleCapture(f64),

    #[error("non-finite state encountered at t = {0}")]
    NonFiniteState(f64),

    #[error("transition method requires selector (joint-locking) constraints")]
    NonSelectorConstraint,
}

pub type Result<T> = std::result::Result<T, Error>;
