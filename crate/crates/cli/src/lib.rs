//! Command-line front end for the `asymrisk` solvers.
//!
//! Parses model files and options, dispatches to the solver modules and
//! writes CSV/JSON artifacts with provenance. Exit codes: 0 success,
//! 1 validation failure or bad input, 2 numerical failure, 3 inconclusive
//! Monte Carlo result.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod error;
pub mod model_file;
pub mod output;
pub mod payoff;

use config::{Cli, Settings};
use error::{CliError, Outcome};

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let settings = Settings::resolve(&cli.options)?;
    let ctx = commands::Context { command: cli.command, settings };
    match ctx.settings.threads {
        // the acceptance runner manages its own pools
        Some(n) if ctx.command != config::Command::Acceptance => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| commands::dispatch(&ctx)),
        _ => commands::dispatch(&ctx),
    }
}

/// Runs one parsed command line, reporting errors on stderr.
pub fn run(cli: &Cli) -> Outcome {
    match execute(cli) {
        Ok(outcome) => outcome,
        Err(e) => {
            eprintln!("error: {e}");
            e.outcome()
        }
    }
}
