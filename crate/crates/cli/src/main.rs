//! `dessl` command-line front end.

mod output;
mod toy;
mod train;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dessl", version, about = "Debiased semi-supervised learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "DESSL_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Comma-separated λ values.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Complete case vs SSL vs debiased SSL on the two-uniform toy problem.
    Toy,
    /// Train over a λ grid and repeated splits, then aggregate.
    Train,
    /// Run a statistical check; exits with status 1 when it fails.
    Verify {
        #[arg(value_enum)]
        check: Check,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    BiasVariance,
    CovEntropy,
    Consistency,
    Rademacher,
    ScoringRule,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(j) = cli.common.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    std::fs::create_dir_all(&cli.common.out)?;
    match cli.command {
        Command::Toy => toy::run(&cli.common).map(|_| true),
        Command::Train => train::run(&cli.common).map(|_| true),
        Command::Verify { check } => verify::run(check, &cli.common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
