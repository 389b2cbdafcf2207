//! `ispd`: fit the intra-departmental correlation model, adjust ISPD
//! indices, run the simulation study and evaluate the Betoidal law.

mod adjust;
mod dist;
mod error;
mod fit;
mod input;
mod output;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "ispd", version, about = "Correlation-adjusted ISPD department indices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a correlation model to a cohort file
    Fit(fit::FitArgs),
    /// Adjusted indices for given model parameters
    Adjust(adjust::AdjustArgs),
    /// Run one simulation scenario
    Simulate(simulate::SimulateArgs),
    /// Evaluate the Betoidal distribution
    Dist(dist::DistArgs),
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Fit(a) => fit::run(a),
        Command::Adjust(a) => adjust::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Dist(a) => dist::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ispd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
