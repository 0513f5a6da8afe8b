//! Library behind the `vtm-sim` binary: scenario parsing, trajectory CSV
//! serialization and the run/compare/validate commands.

pub mod commands;
pub mod csv_io;
pub mod error;
pub mod scenario;

pub use commands::{cmd_compare, cmd_run, cmd_validate, CompareReport, RunSummary, ValidateReport};
pub use error::{CliError, Result, EXIT_NUMERICAL, EXIT_VALIDATION};
pub use scenario::{parse_scenario, Scenario};
