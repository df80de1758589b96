//! `deepida`: simulate multi-view data, train the discriminant model, rank
//! features by bootstrap permutation, and score new samples.
//!
//! Every failure exits nonzero after printing a single
//! `error[Class]: message` line to stderr. Log verbosity comes from the
//! `RUST_LOG` environment variable (default `warn`).

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod io;

#[derive(Parser)]
#[command(
    name = "deepida",
    version,
    about = "Multi-view deep discriminant analysis: simulate, train, rank, predict, evaluate"
)]
struct Cli {
    /// Worker threads for ranking pair jobs (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Train a model from view CSVs and write model + metrics artifacts.
    Train(commands::TrainArgs),
    /// Rank features with the bootstrap permutation ensemble.
    Rank(commands::RankArgs),
    /// Project new data through a trained model and write predictions.
    Predict(commands::PredictArgs),
    /// Accuracy report for a trained model on labeled data.
    Evaluate(commands::EvaluateArgs),
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Joint Gaussian design with block-correlated signal features.
    Linear(commands::SimulateLinearArgs),
    /// Two-class curve design with a derived, noisy second view.
    Nonlinear(commands::SimulateNonlinearArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("bad usage");
            eprintln!(
                "error[InvalidInput]: {}",
                first.trim_start_matches("error: ")
            );
            return ExitCode::from(2);
        }
    };

    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error[InvalidInput]: worker pool: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match &cli.command {
        Command::Simulate(SimulateCmd::Linear(args)) => commands::simulate_linear(args),
        Command::Simulate(SimulateCmd::Nonlinear(args)) => commands::simulate_nonlinear(args),
        Command::Train(args) => commands::train(args),
        Command::Rank(args) => commands::rank(args),
        Command::Predict(args) => commands::predict(args),
        Command::Evaluate(args) => commands::evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', "; ");
            eprintln!("error[{}]: {message}", e.class());
            ExitCode::from(1)
        }
    }
}
