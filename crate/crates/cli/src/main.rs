use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod io;

use config::{Overrides, RunConfig};

/// Day-ahead offering pipeline for a PV + storage virtual power plant.
#[derive(Debug, Parser)]
#[command(name = "vpp-offer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discretize the price history and estimate the Markov transition model.
    Estimate(Overrides),
    /// Sample price scenarios from the model.
    Sample(Overrides),
    /// Solve for the offer surface and write the offer, dispatch and run report.
    Solve(Overrides),
    /// Settle a solved offer against realized prices and PV.
    Evaluate(Overrides),
    /// Compare a solved offer with the extensive-form optimum.
    Verify(Overrides),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, overrides): (fn(&RunConfig) -> error::CliResult<()>, _) = match &cli.command {
        Command::Estimate(o) => (commands::estimate, o),
        Command::Sample(o) => (commands::sample, o),
        Command::Solve(o) => (commands::solve, o),
        Command::Evaluate(o) => (commands::evaluate, o),
        Command::Verify(o) => (commands::verify, o),
    };
    match RunConfig::load(overrides).and_then(|cfg| run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
