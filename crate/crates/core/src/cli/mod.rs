//! Experiment runner: config handling and the `gen`, `run`, `grid`,
//! `uncertainty` and `stats` commands.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_gen, cmd_grid, cmd_run, cmd_stats, cmd_uncertainty, gate_summary, stats_rows, BestCsvRow, CellRow, GateSummary,
    GridDocument, RunDocument, RunEntry, StatsDocument, StatsRow, StepRow, UncertaintyDocument, UncertaintyOptions,
};
pub use config::{ExperimentConfig, TaskSource};

use crate::error::{Error, Result};

/// Environment variable holding the log filter (`error`, `warn`, `info`, `debug`, ...).
pub const LOG_ENV: &str = "BVCL_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "bvcl",
    version,
    about = "Beta-weighted variational continual learning experiments"
)]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run with this single seed instead of the configured `seeds`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent runs and grid cells.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also save the posterior after every task.
    #[arg(long, global = true)]
    pub keep_checkpoints: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic task CSVs.
    Gen,
    /// Sequential training over each configured order and seed.
    Run,
    /// Learning-rate × beta grid search with per-k selection.
    Grid,
    /// Per-sample predictive entropy and mutual information.
    Uncertainty {
        /// Posterior checkpoint to evaluate.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Monte Carlo draws per sample (default: hyper.s_test).
        #[arg(long)]
        samples: Option<usize>,
        /// Accept predictions with entropy strictly below this value.
        #[arg(long)]
        entropy_threshold: Option<f64>,
        /// Accept predictions with mutual information strictly below this value.
        #[arg(long)]
        mi_threshold: Option<f64>,
    },
    /// Kruskal–Wallis separation of correct vs. wrong predictions.
    Stats {
        /// Uncertainty CSV.
        #[arg(long)]
        input: PathBuf,
        /// Order label for the output rows (default: input file stem).
        #[arg(long)]
        order: Option<String>,
    },
}

impl Cli {
    /// Loads the config and applies command-line overrides.
    pub fn effective_config(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if self.keep_checkpoints {
            cfg.keep_checkpoints = true;
        }
        Ok(cfg)
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen => cmd_gen(&cli.effective_config()?).map(drop),
        Command::Run => cmd_run(&cli.effective_config()?).map(drop),
        Command::Grid => cmd_grid(&cli.effective_config()?).map(drop),
        Command::Uncertainty {
            checkpoint,
            samples,
            entropy_threshold,
            mi_threshold,
        } => {
            let opts = UncertaintyOptions {
                checkpoint: checkpoint.clone(),
                samples: *samples,
                entropy_threshold: *entropy_threshold,
                mi_threshold: *mi_threshold,
            };
            cmd_uncertainty(&cli.effective_config()?, &opts).map(drop)
        }
        Command::Stats { input, order } => {
            let out = match (&cli.out, &cli.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => cli.effective_config()?.output_dir(),
                (None, None) => input.parent().map(PathBuf::from).unwrap_or_default(),
            };
            cmd_stats(input, &out, order.as_deref()).map(drop)
        }
    }
}

/// Process exit status for an error: 1 config, 2 data, 3 numeric failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::NumericFailure(_) => 3,
        Error::Shape(_)
        | Error::Io { .. }
        | Error::Parse { .. }
        | Error::Format { .. }
        | Error::Stratification { .. }
        | Error::Degenerate(_)
        | Error::InsufficientData(_) => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["bvcl", "run", "--config", "c.json", "--seed", "7", "--threads", "2"]).unwrap();
        assert!(matches!(cli.command, Command::Run));
        assert_eq!(cli.seed, Some(7));
        assert_eq!(cli.threads, Some(2));
        let cli = Cli::try_parse_from(["bvcl", "uncertainty", "--entropy-threshold", "inf"]).unwrap();
        match cli.command {
            Command::Uncertainty { entropy_threshold, .. } => assert_eq!(entropy_threshold, Some(f64::INFINITY)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(
            exit_code(&Error::io("f", std::io::Error::from(std::io::ErrorKind::NotFound))),
            2
        );
        assert_eq!(exit_code(&Error::NumericFailure("nan".into())), 3);
    }
}
