//! `activemix`: batch entry points for fitting, simulated active learning,
//! benchmark grids, evaluation and serving.

mod bench;
mod error;
mod eval;
mod fit;
mod inputs;
mod serve;
mod settings;
mod sim;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "activemix", version, about = "Semi-supervised mixture text classification with active labeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model once on a labeled corpus and write a checkpoint and predictions.
    Fit(fit::FitCmd),
    /// Run the active loop against ground truth with a simulated oracle.
    ActiveSim(sim::SimCmd),
    /// Run a grid of simulated active runs described by a TOML file.
    Bench(bench::BenchCmd),
    /// Score a prediction file against ground truth.
    Eval(eval::EvalCmd),
    /// Serve the labeling API until interrupted.
    Serve(serve::ServeCmd),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(c) => fit::run(c),
        Command::ActiveSim(c) => sim::run(c),
        Command::Bench(c) => bench::run(c),
        Command::Eval(c) => eval::run(c),
        Command::Serve(c) => serve::run(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
