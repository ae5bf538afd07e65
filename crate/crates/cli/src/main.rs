//! `tadet`: synthetic data, training, evaluation and inference from the shell.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::ChecksFailed;

#[derive(Parser, Debug)]
#[command(
    name = "tadet",
    version,
    about = "Temporal action detection on pre-extracted features"
)]
pub struct Cli {
    /// Worker threads for data generation and inference (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(commands::SynthArgs),
    /// Train a model and write checkpoints and metrics.
    Train(commands::TrainArgs),
    /// Score detections (or a checkpoint) against ground truth.
    Eval(commands::EvalArgs),
    /// Write detections for a dataset split.
    Infer(commands::InferArgs),
    /// Finite-difference gradient checks.
    Gradcheck(CheckArgs),
    /// Gradient checks plus the oracle suites.
    Selftest(CheckArgs),
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Random points per case.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt analytic gradients; every gradient check must then fail.
    #[arg(long)]
    pub inject_fault: bool,
}

/// Process exit status for an error.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tadet_core::Error>() {
            return if e.is_numeric() {
                3
            } else if e.is_io() {
                4
            } else {
                2
            };
        }
        if cause.downcast_ref::<ChecksFailed>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Gradcheck(a) => commands::check(&a, false),
        Command::Selftest(a) => commands::check(&a, true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
