//! Command-line pipeline: configuration, dataset and checkpoint files, and
//! the `hlrp` verbs.

pub mod commands;
pub mod config;
pub mod container;

pub use commands::Context;
pub use config::RunConfig;
pub use container::{load_dataset, save_dataset, Checkpoint, Container};

use crate::error::{Error, Result};
use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

pub const SEED_ENV: &str = "HLRP_SEED";

#[derive(Debug, Parser)]
#[command(name = "hlrp", version, about = "Hyper-LR-PINN training and evaluation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for sampling, initialization and task order (falls back to HLRP_SEED, then the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (falls back to the config, then `hlrp-out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the epoch count (or probe budget) of the command.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Worker threads for per-target jobs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample collocation sets for every phase-1 and phase-2 coefficient.
    ///
    /// Writes data/<preset>_<mu>.hlrp and data/manifest.json.
    GenData,
    /// Train the hypernetwork model over the phase-1 grid.
    ///
    /// Writes phase1/checkpoint.hlrp, phase1/history.csv (epoch, task,
    /// residual, ic, bc, ortho, total) and phase1/metrics.csv (mu, method,
    /// abs_err, rel_err, max_err, explained_var).
    Phase1,
    /// Fine-tune the coefficients for every phase-2 target.
    ///
    /// Writes phase2/<mu>/{checkpoint.hlrp,history.csv} and
    /// phase2/metrics.csv (mu, method, abs_err, rel_err, max_err,
    /// explained_var).
    Phase2,
    /// Train the configured baselines on the phase-2 targets.
    ///
    /// Writes baseline/<kind>/... checkpoints and histories and
    /// baseline/<kind>/metrics.csv (mu, method, abs_err, rel_err, max_err,
    /// explained_var).
    Baseline,
    /// Evaluate a checkpoint on one or more datasets.
    ///
    /// Writes eval/metrics.csv (mu, method, abs_err, rel_err, max_err,
    /// explained_var); low-rank models add eval/ranks.csv (mu, r1.., phase2_trainable)
    /// and eval/heatmap_l<l>.csv (mu, s1.., sorted descending).
    Eval {
        /// Checkpoint written by phase1, phase2 or baseline.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file from gen-data; repeat for several.
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
    },
    /// Phase 2 and baselines over all targets in one comparison table.
    ///
    /// Writes sweep/table.csv (mu, method, abs_err_mean, abs_err_std,
    /// rel_err_mean, rel_err_std, runs) and sweep/metrics.csv with one row per
    /// run.
    Sweep,
    /// Epochs each method needs to reach an absolute-error threshold.
    ///
    /// Writes probe/probe.csv (mu, hyper_epochs, hyper_reached,
    /// vanilla_epochs, vanilla_reached).
    EpochsProbe {
        /// Mean absolute test error to reach (defaults to the config).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Per-layer ranks and sorted coefficients of the phase-1 model.
    ///
    /// Writes ranks/ranks.csv (mu, r1.., phase2_trainable) and
    /// ranks/heatmap_l<l>.csv (mu, s1..).
    RankReport,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

impl Cli {
    fn context(&self) -> Result<Context> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs --config".into()))?;
        let cfg = RunConfig::load(path)?;
        let seed = match self.seed {
            Some(s) => s,
            None => env_seed()?.or(cfg.seed).unwrap_or(0),
        };
        let out = self.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| "hlrp-out".into());
        Context::new(cfg, seed, out, self.epochs, self.jobs)
    }

    /// Runs the selected command and returns its summary.
    pub fn run(&self) -> Result<String> {
        match &self.command {
            Command::Eval { checkpoint, dataset } => {
                let out = self.out.clone().unwrap_or_else(|| "hlrp-out".into());
                commands::eval(&out, checkpoint, dataset)
            }
            Command::GenData => commands::gen_data(&self.context()?),
            Command::Phase1 => commands::phase1(&self.context()?),
            Command::Phase2 => commands::phase2(&self.context()?),
            Command::Baseline => commands::baseline(&self.context()?),
            Command::Sweep => commands::sweep(&self.context()?),
            Command::EpochsProbe { threshold } => commands::epochs_probe(&self.context()?, *threshold),
            Command::RankReport => commands::rank_report_cmd(&self.context()?),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 2 for configuration or usage errors, 3 for numeric
/// divergence, 4 for I/O and file-format problems.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.run() {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("hlrp: {e}");
            e.exit_code()
        }
    }
}
