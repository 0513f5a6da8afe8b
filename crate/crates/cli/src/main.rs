use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vtm_core::TransitionMethod;
use vtm_sim::commands::{cmd_compare, cmd_run, cmd_validate};
use vtm_sim::error::{CliError, EXIT_NUMERICAL};
use vtm_sim::scenario::parse_scenario;

#[derive(Parser)]
#[command(
    name = "vtm-sim",
    version,
    about = "Forward dynamics of chains with scheduled joint locking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the trajectory CSV.
    Run {
        /// Scenario file (JSON).
        #[arg(long)]
        scenario: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's transition method
        /// (general|partitioned|redundant|minimal|naive).
        #[arg(long)]
        transition: Option<String>,
        /// Override the scenario's formulation (index1|projected|voronets).
        #[arg(long)]
        formulation: Option<String>,
        /// Override the scenario's step size in seconds.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Run several transition methods on one scenario and compare them.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated transition methods.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        /// Output directory; one CSV per method.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the schedule's regularity without integrating.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            transition,
            formulation,
            dt,
        } => {
            let mut scenario = parse_scenario(&scenario)?;
            if let Some(t) = transition {
                scenario.transition = t;
            }
            if let Some(f) = formulation {
                scenario.formulation = f;
            }
            if let Some(dt) = dt {
                scenario.dt = dt;
            }
            scenario.validate()?;
            let summary = cmd_run(&scenario, &out)?;
            print!("{}", summary.render());
            println!("csv: {}", out.display());
            Ok(())
        }
        Command::Compare { scenario, methods, out } => {
            let scenario = parse_scenario(&scenario)?;
            let methods = methods
                .iter()
                .map(|m| m.parse::<TransitionMethod>().map_err(CliError::from))
                .collect::<Result<Vec<_>, _>>()?;
            let report = cmd_compare(&scenario, &methods, &out)?;
            print!("{}", report.render());
            if report.ok {
                Ok(())
            } else {
                Err(CliError::Numerical(format!(
                    "consistent transition methods deviate by {:.3e}",
                    report.max_gated_deviation
                )))
            }
        }
        Command::Validate { scenario } => {
            let scenario = parse_scenario(&scenario)?;
            let report = cmd_validate(&scenario)?;
            print!("{}", report.render());
            if report.ok {
                Ok(())
            } else {
                Err(CliError::Validation("schedule fails the regularity checks".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            let code = err.exit_code();
            ExitCode::from(u8::try_from(code).unwrap_or(EXIT_NUMERICAL as u8))
        }
    }
}
