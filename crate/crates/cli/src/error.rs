use thiserror::Error;

/// Process exit code for validation and usage errors.
pub const EXIT_VALIDATION: i32 = 2;
/// Process exit code for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<vtm_core::Error> for CliError {
    fn from(err: vtm_core::Error) -> Self {
        use vtm_core::Error as E;
        match &err {
            E::DimensionMismatch(_)
            | E::InvalidModel(_)
            | E::InvalidSchedule(_)
            | E::InvalidPartition(_)
            | E::OffGridEvent { .. } => CliError::Validation(err.to_string()),
            E::RankDeficient(_)
            | E::Regularity { .. }
            | E::UncapturedEvent(_)
            | E::CaptureTimeMismatch { .. }
            | E::DoubleCapture(_)
            | E::NonFiniteState(_)
            | E::NonSelectorConstraint => CliError::Numerical(err.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
