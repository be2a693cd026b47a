//! Command-line driver for the dynamic-mixup engine: generate synthetic
//! datasets, train any variant, evaluate checkpoints, and plot trajectories.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fmt;

use clap::{Args, Parser, Subcommand};

/// Exit taxonomy: 0 success, 1 usage/config error, 2 runtime error.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<tgdm_core::Error> for CliError {
    fn from(e: tgdm_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "tgdm",
    about = "Target-guided dynamic mixup for cross-domain few-shot learning",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a source/target pair of synthetic .fmat dataset directories.
    GenData(GenDataArgs),
    /// Train a variant from a run config; writes a CSV log and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the full baseline ladder) on the novel split.
    Eval(EvalArgs),
    /// Render ratio-trajectory and loss-curve plots from a training log.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory; `source/` and `target/` are created inside.
    #[arg(long, default_value = "data")]
    pub out: std::path::PathBuf,
    /// Generation seed (target domain derives its own stream from it).
    #[arg(long)]
    pub seed: u64,
    /// Classes in the source domain.
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    /// Classes in the target domain (defaults to --classes).
    #[arg(long)]
    pub target_classes: Option<usize>,
    /// Samples per class.
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Target-domain rotation in degrees.
    #[arg(long, default_value_t = 45.0)]
    pub rotation: f64,
    /// Target-domain mean translation.
    #[arg(long, default_value_t = 2.5)]
    pub translation: f64,
    /// Cluster spread (both domains).
    #[arg(long, default_value_t = 0.35)]
    pub spread: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: std::path::PathBuf,
    /// Override the configured variant.
    #[arg(long)]
    pub variant: Option<String>,
    /// Fixed mix ratio (with --variant m3t-fixed).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Override the configured iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Override the configured output directory.
    #[arg(long)]
    pub out_dir: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run configuration file (data, split and protocol come from here).
    #[arg(long)]
    pub config: std::path::PathBuf,
    /// Checkpoint to evaluate (ignored with --suite).
    #[arg(long)]
    pub checkpoint: Option<std::path::PathBuf>,
    /// Number of evaluation episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Evaluation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Support shots per class at evaluation.
    #[arg(long)]
    pub k_shot: Option<usize>,
    /// Train and evaluate the full baseline ladder instead of a checkpoint.
    #[arg(long)]
    pub suite: bool,
    /// Where to write the JSON-line report(s); defaults to
    /// `<out_dir>/eval.jsonl`.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Training log CSV.
    #[arg(long)]
    pub log: std::path::PathBuf,
    /// Output directory for the plot files.
    #[arg(long, default_value = "plots")]
    pub out_dir: std::path::PathBuf,
    /// Maximum points per downsampled CSV.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
}

/// Parse and dispatch. Returns the process exit code through `CliError`;
/// clap usage problems map to exit code 1, help/version print and succeed.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match cli.command {
        Command::GenData(args) => commands::gen_data::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Plot(args) => commands::plot::run(&args),
    }
}
