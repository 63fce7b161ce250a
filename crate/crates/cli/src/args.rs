use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hive_core::factor::DEFAULT_HETERO_ITERS;
use hive_core::pipeline::{DEFAULT_C0, DEFAULT_PA_PERMUTATIONS, DEFAULT_PA_QUANTILE};

#[derive(Debug, Parser)]
#[command(
    name = "hive",
    version,
    about = "Sparse multivariate regression with hidden-variable adjustment"
)]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the direct-effect matrix (HIVE, or H-HIVE with --hetero).
    Fit(FitArgs),
    /// Estimate the number of hidden variables from stage-1 residuals.
    SelectK(SelectKArgs),
    /// Cross-validate the stage-1 penalties.
    Tune(TuneArgs),
    /// Run a simulation study from a JSON configuration.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KMethod {
    Ratio,
    Pa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneKind {
    Grid,
    Sequential,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Design matrix CSV (rows = samples).
    #[arg(long)]
    pub x: PathBuf,
    /// Response matrix CSV (rows = samples).
    #[arg(long)]
    pub y: PathBuf,
    /// Input files start with a header row.
    #[arg(long)]
    pub header: bool,
    /// Fit on the raw columns instead of centered, unit-variance ones.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Stage1Args {
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Cross-validation folds for any penalty not given explicitly.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub cv: Option<u64>,
    #[arg(long, value_enum, default_value_t = TuneKind::Sequential)]
    pub tune: TuneKind,
    /// Multiplier of the sequential lambda1 rule.
    #[arg(long, default_value_t = DEFAULT_C0)]
    pub c0: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PaArgs {
    /// Permutations for parallel analysis.
    #[arg(long, default_value_t = DEFAULT_PA_PERMUTATIONS)]
    pub n_perm: usize,
    /// Permutation quantile for parallel analysis.
    #[arg(long, default_value_t = DEFAULT_PA_QUANTILE)]
    pub quantile: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stage1: Stage1Args,
    #[arg(long)]
    pub lambda3: Option<f64>,
    /// Number of hidden variables.
    #[arg(long, conflicts_with = "select_k", value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Estimate the number of hidden variables instead of giving --k.
    #[arg(long, value_enum)]
    pub select_k: Option<KMethod>,
    #[command(flatten)]
    pub pa: PaArgs,
    /// Use HeteroPCA for the projection (H-HIVE).
    #[arg(long)]
    pub hetero: bool,
    #[arg(long, default_value_t = DEFAULT_HETERO_ITERS)]
    pub t_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fit a plain group-lasso when K is estimated as 0.
    #[arg(long)]
    pub allow_no_hidden: bool,
    /// Block coordinate descent sweep limit.
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Convergence tolerance on the largest row change.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Exit with code 4 if a solver did not converge.
    #[arg(long)]
    pub strict: bool,
    /// Store the run time in the manifest.
    #[arg(long)]
    pub record_time: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectKArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stage1: Stage1Args,
    #[arg(long, value_enum)]
    pub method: KMethod,
    #[command(flatten)]
    pub pa: PaArgs,
    /// Largest K considered by the ratio method (default min(n, m) / 2).
    #[arg(long)]
    pub k_bar: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the selection record as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    pub cv: u64,
    #[arg(long, value_enum, default_value_t = TuneKind::Sequential)]
    pub tune: TuneKind,
    #[arg(long, default_value_t = DEFAULT_C0)]
    pub c0: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the tuning record as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON file with `configs`, `methods`, `replicates` and optional `settings`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub record_time: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
