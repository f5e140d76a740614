//! Command-line front end for the functional SAR toolkit.
//!
//! `fsar fit`, `fsar test`, `fsar simulate` and `fsar weights` read CSV
//! inputs, write CSV/SVG outputs and a JSON [`report::RunReport`] into
//! `--out`. Exit codes: 0 success, 2 input error, 3 numerical failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fsar_core::basis::BasisKind;
use fsar_core::estimate::{RhoUpdate, DEFAULT_MAX_ITER, DEFAULT_TOL};
use fsar_core::inference::TestTransform;
use fsar_core::FsarError;

pub mod commands;
pub mod config;
pub mod io;
pub mod report;
pub mod svg;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fsar", version, about = "Functional SAR regression: fit, test, simulate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate b, rho and sigma2; optionally a confidence band for beta.
    Fit(FitArgs),
    /// Test H0: beta = beta0 with the normalized cross-covariance statistic.
    Test(TestArgs),
    /// Run the Monte Carlo study described by a config file.
    Simulate(SimulateArgs),
    /// Build a spatial weights matrix from coordinates.
    Weights(WeightsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Basis family: fourier or bspline.
    #[arg(long)]
    pub basis: Option<BasisKind>,
    /// Number of basis functions.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "fsar-out")]
    pub out: PathBuf,
    /// Worker threads for Monte Carlo replicates (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Alternating least squares.
    Ls,
    /// Profile maximum likelihood.
    Ml,
}

/// Where `W` comes from; exactly one source.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct WeightsSource {
    /// Dense n x n weights CSV.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Edge list CSV of 0-based i,j,weight rows.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Coordinates CSV id,x,y; W = symmetrized row-standardized neighbour graph.
    #[arg(long)]
    pub coords: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NeighborArgs {
    /// Neighbours per area when building W from coordinates.
    #[arg(long, default_value_t = 4, conflicts_with = "threshold")]
    pub knn: usize,
    /// Distance threshold instead of k nearest neighbours.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Curves CSV: header id,t_1..t_N then one row per area.
    #[arg(long)]
    pub curves: PathBuf,
    /// Sidecar grid file when the curves header holds labels, not points.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Response CSV: id,y (or a single y column in curve order).
    #[arg(long)]
    pub response: PathBuf,
    #[command(flatten)]
    pub source: WeightsSource,
    #[command(flatten)]
    pub neighbors: NeighborArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Ls)]
    pub method: MethodArg,
    /// rho half-step of the iterative method: ls (closed form) or likelihood.
    #[arg(long, default_value = "ls")]
    pub rho_update: RhoUpdate,
    /// Treat rho as known and fit b by generalized least squares.
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Add a pointwise confidence band at this level (e.g. 0.95).
    #[arg(long, value_name = "LEVEL")]
    pub band: Option<f64>,
}

#[derive(Debug, Clone, Args)]
#[group(id = "null", required = true, multiple = false, args = ["beta0", "null_zero"])]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Null slope on the grid: t,beta rows or one beta column.
    #[arg(long)]
    pub beta0: Option<PathBuf>,
    /// Test H0: beta = 0.
    #[arg(long)]
    pub null_zero: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Number of covariance eigenvalues used in the statistic.
    #[arg(long)]
    pub kn: Option<usize>,
    /// decorrelate: (I - rho W) Y; inverse: (I - rho W)^{-1} Y.
    #[arg(long, default_value = "decorrelate")]
    pub transform: TestTransform,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Study config (.cfg); the built-in five-scenario study when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// True rho values, replacing the config list (comma separated).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub rho: Vec<f64>,
    /// Area coordinates id,x,y instead of uniform random points.
    #[arg(long, conflicts_with_all = ["weights", "edges"])]
    pub coords: Option<PathBuf>,
    /// Symmetric dense weights CSV used as W directly.
    #[arg(long, conflicts_with = "edges")]
    pub weights: Option<PathBuf>,
    /// Symmetric 0-based edge list used as W directly.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Standardize {
    /// Row-standardize, then (W + W')/2.
    Symmetric,
    /// Row-standardize only.
    Row,
    /// Binary adjacency.
    None,
}

#[derive(Debug, Clone, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub coords: PathBuf,
    #[command(flatten)]
    pub neighbors: NeighborArgs,
    #[arg(long, value_enum, default_value_t = Standardize::Symmetric)]
    pub standardize: Standardize,
    #[command(flatten)]
    pub common: Common,
}

/// Exit code for a failed run.
pub fn exit_code(e: &FsarError) -> i32 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_NUMERICAL
    }
}

/// Error text plus a remedy where one is known.
pub fn describe(e: &FsarError) -> String {
    match e {
        FsarError::RankDeficient { .. } => format!("{e} (override with --kn)"),
        FsarError::SingularDesign(_) => format!("{e} (pass --k)"),
        _ => e.to_string(),
    }
}

pub fn run(cli: Cli) -> fsar_core::Result<()> {
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Test(a) => commands::test(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Weights(a) => commands::weights(&a),
    }
}
