//! Command line pipeline for the stochastic shallow water calibration:
//! spin-up, truth run, noise calibration, ensembles and verification.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::Config;
pub use error::CliError;
use output::{Layout, Lock};

#[derive(Debug, Parser)]
#[command(name = "srsw-calib", version, about = "Calibrate and run stochastic shallow water ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Scenario configuration (TOML). Keys may be overridden with
    /// SRSW_<SECTION>__<KEY> environment variables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output root; overrides outputs.directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,

    /// Ensemble master seed; overrides ensemble.master_seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Start from the full-resolution preset instead of the desk-scale one.
    #[arg(long, global = true)]
    pub paper_scale: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Burn-in run from the balanced starting state.
    Spinup,
    /// Fine-grid reference trajectory from the spun-up state.
    Truth,
    /// Decorrelation analysis, stream-function solves and EOF basis.
    Calibrate,
    /// Stochastic ensemble on the coarse grid.
    Ensemble,
    /// Verification metrics, rank histograms and summary table.
    Uq {
        /// Further ensemble directories to include in the summary table.
        #[arg(long = "ensemble-dir")]
        ensemble_dirs: Vec<PathBuf>,
    },
}

/// Effective configuration for the given flags.
pub fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path, cli.paper_scale)?,
        None => Config::from_sources("", cli.paper_scale, std::env::vars())?,
    };
    if let Some(dir) = &cli.output_dir {
        config.outputs.directory = dir.display().to_string();
    }
    if let Some(seed) = cli.seed {
        config.ensemble.master_seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// Run one command; returns the directory it wrote.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let config = resolve_config(cli)?;
    let layout = Layout::new(&config.outputs.directory, config.scenario_name());
    let _lock = Lock::acquire(&layout.root)?;
    match &cli.command {
        Command::Spinup => commands::cmd_spinup(&config, &layout),
        Command::Truth => commands::cmd_truth(&config, &layout),
        Command::Calibrate => commands::cmd_calibrate(&config, &layout),
        Command::Ensemble => commands::cmd_ensemble(&config, &layout),
        Command::Uq { ensemble_dirs } => commands::cmd_uq(&config, &layout, ensemble_dirs),
    }
}
