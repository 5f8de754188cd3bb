mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::CliError;

pub const VERSION: &str = env!("MULTIDECON_VERSION");

/// Blind deconvolution from diverse inputs: instance generation, solves,
/// coherence and certificate reports, and phase-transition grids.
#[derive(Debug, Parser)]
#[command(name = "multidecon", version = VERSION)]
pub struct Cli {
    /// Master seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "MULTIDECON_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one instance and write its signals.
    Gen {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate and solve one instance.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Coherence quantities and sample-complexity margins of one instance.
    Coherence {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the golfing dual certificate and check optimality.
    Certify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a phase-transition grid.
    Phase {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize a grid CSV: per-cell rates and boundary estimates.
    Summarize {
        /// Grid CSV written by `phase`.
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
