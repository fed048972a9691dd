//! `geo-exec`: data synthesis, impact calibration, order generation,
//! strategy runs, PPO training, MAP-Elites search and reporting.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "geo-exec", version, about = "Minute-bar execution research pipeline")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 means one per logical core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic minute-bar tree.
    Synth,
    /// Fit the impact model per symbol on the training window.
    Calibrate,
    /// Draw training and test parent orders.
    GenOrders,
    /// Run one strategy over a set of orders.
    Run {
        /// twap, vwap, pov, random, ppo or elite:<i>_<j>
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        orders: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a PPO policy on the training orders.
    TrainPpo {
        #[arg(long)]
        orders: Option<PathBuf>,
    },
    /// Search for regime specialists starting from a PPO checkpoint.
    MapElites {
        #[arg(long)]
        orders: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every available strategy on the test orders and report.
    Evaluate {
        #[arg(long)]
        orders: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Summarise existing results files.
    Report,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {path}: {msg}")]
    Missing { path: String, msg: String },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn missing(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Missing { path: path.display().to_string(), msg: e.to_string() }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Failed(format!("{}: {e}", path.display()))
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Missing { .. } => "missing-input",
            CliError::Failed(_) => "failed",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Missing { .. } | CliError::Failed(_) => 1,
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?.resolve(cli.out, cli.seed, cli.workers)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Calibrate => commands::calibrate(&cfg),
        Command::GenOrders => commands::gen_orders(&cfg),
        Command::Run { strategy, orders, checkpoint } => {
            commands::run(&cfg, &strategy, orders.as_deref(), checkpoint.as_deref())
        }
        Command::TrainPpo { orders } => commands::train_ppo(&cfg, orders.as_deref()),
        Command::MapElites { orders, checkpoint } => commands::map_elites(&cfg, orders.as_deref(), checkpoint.as_deref()),
        Command::Evaluate { orders, checkpoint } => commands::evaluate(&cfg, orders.as_deref(), checkpoint.as_deref()),
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GEO_EXEC_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("geo-exec: error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
