//! `disdca`: experiment runner for distributed dual coordinate ascent.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "disdca", version, about = "Distributed dual coordinate ascent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver and write a trace CSV (one per m when m is a list).
    Solve(ConfigArgs),
    /// One-communication runs for each K and partition scheme.
    OneComm(ConfigArgs),
    /// Compare measured suboptimality with the closed-form rate.
    CheckBounds(ConfigArgs),
    /// Write the synthetic dataset in libsvm format.
    Synth(ConfigArgs),
    /// Serve the reduce for a TCP session.
    Coordinator {
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
        #[arg(long)]
        workers: usize,
        /// Feature dimension of the dataset the workers will train on.
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
    },
    /// Join a TCP session as one worker. Worker 0 writes the trace.
    Worker {
        #[arg(long)]
        connect: Option<String>,
        #[arg(long)]
        worker_id: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Summarize a trace CSV.
    Diagnose {
        trace: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(a) => commands::solve(&a.load()?),
        Command::OneComm(a) => commands::one_comm(&a.load()?),
        Command::CheckBounds(a) => commands::check_bounds(&a.load()?),
        Command::Synth(a) => commands::synth(&a.load()?),
        Command::Coordinator {
            listen,
            workers,
            dim,
            timeout_secs,
        } => commands::coordinator(&listen, workers, dim, Duration::from_secs(timeout_secs)),
        Command::Worker {
            connect,
            worker_id,
            config,
        } => commands::worker(&config.load()?, connect.as_deref(), worker_id),
        Command::Diagnose { trace } => commands::diagnose_to_stdout(&trace),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
