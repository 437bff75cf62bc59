//! `gns`: generate toy particle datasets, train graph-network simulators,
//! roll them out, score them and plot the results.

mod ablate;
mod config;
mod eval;
mod gen;
mod plot;
mod rollout;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gns_core::GnsError;

#[derive(Parser)]
#[command(name = "gns", version, about = "Learned particle simulation with graph networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of simulated trajectories.
    Gen(gen::Args),
    /// Train a simulator on a dataset.
    Train(train::Args),
    /// Roll out a trained simulator from a dataset trajectory.
    Rollout(rollout::Args),
    /// Score a checkpoint or a saved rollout against ground truth.
    Eval(eval::Args),
    /// Sweep one design axis with short training runs.
    Ablate(ablate::Args),
    /// Draw metric curves or ablation bars from a CSV file.
    Plot(plot::Args),
}

fn exit_code(err: &GnsError) -> u8 {
    match err {
        GnsError::Config(_) => 1,
        GnsError::Training(_) | GnsError::Blowup { .. } | GnsError::Generation(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen::run(a),
        Command::Train(a) => train::run(a),
        Command::Rollout(a) => rollout::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Ablate(a) => ablate::run(a),
        Command::Plot(a) => plot::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Config path flag shared by the commands that accept one.
#[derive(clap::Args, Debug, Clone)]
pub struct ConfigArg {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
}
