//! Command-line front end for the spatial functional linear model toolkit.
//!
//! Subcommands: `simulate` (Monte Carlo study), `fit` (estimate the model
//! from files), `select` (posterior model ranking), `moran` (autocorrelation
//! test), `smooth` (kernel smoothing of irregular observations), and `rerun`
//! (replay a recorded run from its manifest). Every run writes a
//! `manifest.json` next to its outputs; re-running from the manifest
//! reproduces the outputs byte for byte.
//!
//! Exit codes: 0 on success, 2 for unreadable or invalid inputs, 3 for
//! numerical failures.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sflm_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(
    name = "sflm",
    version,
    about = "Scalar-on-function regression with a spatial lag of the response"
)]
pub struct Cli {
    /// Output directory (falls back to $SFLM_OUT_DIR, then `.`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for parallel sections; never affects the results.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Monte Carlo study of the estimator on a rook lattice.
    Simulate(SimulateArgs),
    /// Fit the spatial model to curve and response files.
    Fit(FitArgs),
    /// Rank truncation levels and neighbour counts by posterior probability.
    Select(SelectArgs),
    /// Permutation test of Moran's I for a response vector.
    Moran(MoranArgs),
    /// Smooth irregular observations onto a common grid.
    Smooth(SmoothArgs),
    /// Re-run a recorded command from its manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Select(_) => "select",
            Command::Moran(_) => "moran",
            Command::Smooth(_) => "smooth",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Lattice rows (sample size is rows * cols).
    #[arg(long)]
    pub rows: usize,
    /// Lattice columns.
    #[arg(long)]
    pub cols: usize,
    /// True spatial autocorrelation in [0, 1).
    #[arg(long)]
    pub rho: f64,
    /// Score-decay exponent of the predictor expansion.
    #[arg(long)]
    pub gamma: f64,
    /// Number of replications.
    #[arg(long)]
    pub reps: usize,
    /// Base seed; replication r uses an independent substream of it.
    #[arg(long)]
    pub seed: u64,
    /// Variance share for the truncation choice.
    #[arg(long, default_value_t = 0.70)]
    pub pve: f64,
    /// Scale of the response noise.
    #[arg(long, default_value_t = 0.5)]
    pub noise_scale: f64,
    /// Terms in the predictor and slope expansions.
    #[arg(long, default_value_t = 50)]
    pub n_terms: usize,
    /// Evaluation grid size on [0, 1].
    #[arg(long, default_value_t = 100)]
    pub grid_size: usize,
    /// Also write per-replication records to replications.csv.
    #[arg(long)]
    pub per_rep: bool,
    /// Write replication 0's curves and response for downstream fitting.
    #[arg(long)]
    pub emit_data: bool,
    /// Write true and fitted slope curves for the given replication.
    #[arg(long, value_name = "REP")]
    pub beta_curves: Option<usize>,
}

/// Exactly one spatial-weight source: a rook lattice, k nearest neighbours
/// over a coordinate file, or an explicit edge list.
#[derive(Args, Debug)]
pub struct WeightSourceArgs {
    /// Rook lattice dimensions.
    #[arg(long, num_args = 2, value_names = ["ROWS", "COLS"])]
    pub rook: Option<Vec<usize>>,
    /// Number of nearest neighbours (requires --coords).
    #[arg(long)]
    pub knn: Option<usize>,
    /// Distance beyond which selected neighbours are dropped (default: none).
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Coordinate CSV with columns unit,x,y.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// Edge-list CSV with columns from,to,weight.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Wide curve CSV (header unit,t_1,...,t_p).
    #[arg(long)]
    pub curves: PathBuf,
    /// Response CSV with columns unit,y.
    #[arg(long)]
    pub response: PathBuf,
    #[command(flatten)]
    pub weight_source: WeightSourceArgs,
    /// Variance share for the truncation choice (ignored with --m).
    #[arg(long)]
    pub pve: Option<f64>,
    /// Fixed truncation level.
    #[arg(long)]
    pub m: Option<usize>,
    /// Drop the intercept column.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Wide curve CSV (header unit,t_1,...,t_p).
    #[arg(long)]
    pub curves: PathBuf,
    /// Response CSV with columns unit,y.
    #[arg(long)]
    pub response: PathBuf,
    /// Coordinate CSV with columns unit,x,y.
    #[arg(long)]
    pub coords: PathBuf,
    /// Candidate neighbour counts, e.g. `2..9` or `2,3,5`.
    #[arg(long)]
    pub ks: String,
    /// Candidate truncation levels, e.g. `1,2` or `1..3`.
    #[arg(long)]
    pub ms: String,
    /// Distance beyond which selected neighbours are dropped (default: none).
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Hyperparameters a,b,g,d (default 0,0,1/n,1.01).
    #[arg(long)]
    pub hyper: Option<String>,
    /// Reference candidate `m,k` (default: smallest m, smallest k).
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Args, Debug)]
pub struct MoranArgs {
    /// Response CSV with columns unit,y.
    #[arg(long)]
    pub response: PathBuf,
    #[command(flatten)]
    pub weight_source: WeightSourceArgs,
    /// Number of random relabellings.
    #[arg(long, default_value_t = 999)]
    pub permutations: usize,
    /// Seed for the permutation stream.
    #[arg(long)]
    pub seed: u64,
    /// Two-sided alternative instead of positive autocorrelation.
    #[arg(long)]
    pub two_sided: bool,
    /// Also write the centered value / spatial lag pairs to scatter.csv.
    #[arg(long)]
    pub scatter: bool,
}

#[derive(Args, Debug)]
pub struct SmoothArgs {
    /// Long observation CSV with columns unit,time,value.
    #[arg(long)]
    pub raw: PathBuf,
    /// Kernel bandwidth on the time axis.
    #[arg(long)]
    pub bandwidth: f64,
    /// Equispaced output grid size on [0, 1].
    #[arg(long, default_value_t = 100)]
    pub grid_size: usize,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    /// Manifest of an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}

/// CLI failure with the exit-code split required by the tool contract.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(CoreError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Core(e) if e.is_input_error() => ExitCode::from(2),
            CliError::Core(_) => ExitCode::from(3),
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match commands::execute(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
