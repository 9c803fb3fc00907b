//! `sksd`: experiment runner. Each subcommand reads a JSON config, writes
//! CSV tables and a `run.json` with the resolved configuration into `--out`.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or configuration, 1 for
//! failures while running.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<sksd::Error> for CliError {
    fn from(e: sksd::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sksd", version, about = "Sliced kernelized Stein discrepancy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Goodness-of-fit benchmark on Gaussian, Laplace, Student-t and diffusion alternatives.
    GofBenchmark(Shared),
    /// Goodness-of-fit tests against perturbed Gaussian-Bernoulli RBMs.
    GofRbm(Shared),
    /// One SVGD or sliced SVGD run.
    Svgd(Shared),
    /// Particle variance sweep on a standard Gaussian target.
    Variance(Shared),
    /// SGHMC step-size selection by discrepancy.
    SghmcSelect(Shared),
    /// ICA training by discrepancy minimisation.
    Ica(Shared),
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Debug, Clone)]
pub struct Shared {
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                CliError::Config(_) => "config error",
                CliError::Runtime(_) => "error",
            };
            let msg = e.to_string().replace('\n', " ");
            if msg.starts_with("config error") {
                eprintln!("sksd: {msg}");
            } else {
                eprintln!("sksd: {kind}: {msg}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
