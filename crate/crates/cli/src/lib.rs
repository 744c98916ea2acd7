//! `clens` command-line pipeline: generate synthetic data, train toy
//! ensembles, then score, partition, predict, detect phases, fit models,
//! list extreme samples and aggregate a report.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod artifacts;
mod commands;
pub mod config;
pub mod exit;
pub mod extremes;
pub mod report;

pub use commands::execute;
use config::{parse_thresholds, parse_window};
use extremes::Which;

#[derive(Debug, Parser)]
#[command(
    name = "clens",
    version,
    about = "Ensemble confusion scores and OOD accuracy prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset bundle.
    Gen(GenArgs),
    /// Train toy ensembles on a bundle; writes probability logs and a manifest.
    Train(TrainArgs),
    /// Per-sample entropy and confusion scores.
    Score(AnalysisArgs),
    /// Confusion bins, per-bin accuracies and correct-count subpopulations.
    Partition(AnalysisArgs),
    /// Predict OOD accuracy of every run from ID per-bin accuracies.
    Predict(AnalysisArgs),
    /// Detect the three training phases from the metrics series.
    Phases(AnalysisArgs),
    /// Fit the per-group accuracy model and the collinearity model.
    Fit(AnalysisArgs),
    /// List the lowest or highest confusion samples of a dataset.
    Extremes(ExtremesArgs),
    /// Aggregate previously written artifacts into one report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// mixture, three-phase or colored2
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Bundle directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated architectures: `linear` or widths like `128x64`.
    #[arg(long, value_delimiter = ',')]
    pub archs: Option<Vec<String>>,
    /// Seeds per architecture.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write `<dataset>.init.cpl` with the untrained model's outputs.
    #[arg(long)]
    pub log_init: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Structured,
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Epoch window a:b for confusion scores (default: all epochs).
    #[arg(long, value_parser = parse_window, conflicts_with = "epoch")]
    pub window: Option<(usize, usize)>,
    /// Use the entropy at a single epoch instead of the confusion score.
    #[arg(long)]
    pub epoch: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Correct-count thresholds lo:hi (default M/3:2M/3).
    #[arg(long, value_parser = parse_thresholds)]
    pub thresholds: Option<(f64, f64)>,
    /// First epoch of the entropy-std tail.
    #[arg(long)]
    pub tail_start: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ExtremesArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "lowest")]
    pub which: Which,
    /// Only ensemble-consensus mistakes.
    #[arg(long)]
    pub mistakes_only: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding outputs of the analysis subcommands.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Report file (default: <in>/report.md).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
