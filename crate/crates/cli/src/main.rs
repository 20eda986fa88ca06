//! Command-line driver for point-vortex equilibrium studies.
//!
//! Exit codes: 0 success, 2 validation/usage error, 3 non-convergence.

mod commands;
mod manifest;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "pointvortex",
    version,
    about = "Equilibrium statistics of the planar point-vortex gas"
)]
pub struct Cli {
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads for parallel reductions (0 keeps the default pool).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Override of the admissibility floor on beta (default is the scaled
    /// floor beta lambda^2 N = -4 pi).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta_min: Option<f64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Metropolis sampling of the canonical ensemble exp(-beta H).
    Sample(SampleArgs),
    /// Free-energy report with the variational bound check (exact
    /// quadrature oracle attached for N <= 3).
    Bounds(BoundsArgs),
    /// Finite-N occupation fixed point and its scaling fields.
    SolveFinite(SolveFiniteArgs),
    /// Continuum mean-field density: the limit equation, or the finite-N
    /// variant with the self-energy field.
    SolvePde(SolvePdeArgs),
    /// Two-species net-vorticity field and its sinh-relation fit.
    SinhPoisson(SinhPoissonArgs),
    /// Finite-N to continuum L1-convergence table.
    Converge(ConvergeArgs),
    /// Self-energy decay table against the analytic bound.
    Decay(DecayArgs),
}

#[derive(Debug, Clone, Parser, Serialize)]
pub struct SampleArgs {
    /// Number of vortices.
    #[arg(long)]
    pub n: usize,
    /// Inverse temperature (negative values are the clustering regime).
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    /// Total Metropolis steps including burn-in.
    #[arg(long)]
    pub steps: usize,
    /// RNG seed; all randomness flows from it.
    #[arg(long)]
    pub seed: u64,
    /// Half-width of the square proposal window (default side/8).
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Record every k-th post-burn-in state.
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
    /// Domain side.
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    /// Vortex strength.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Independent replicate chains with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// Chain file (JSON lines), relative to --out-dir unless absolute.
    #[arg(long, default_value = "chain.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Landau,
    Full,
}

#[derive(Debug, Clone, Parser, Serialize)]
pub struct BoundsArgs {
    /// Number of vortices.
    #[arg(long)]
    pub n: u64,
    /// Number of coarse boxes.
    #[arg(long)]
    pub m: usize,
    /// Inverse temperature (actual, not scaled).
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    /// Variational form: plug in the most probable macrostate, or the full
    /// ensemble sum.
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    /// Base quadrature resolution of the oracle.
    #[arg(long)]
    pub oracle_resolution: Option<usize>,
    /// Sweep specification start:stop:count; emits one CSV row per beta.
    #[arg(long, allow_hyphen_values = true)]
    pub beta_sweep: Option<String>,
    /// Report file (JSON), relative to --out-dir unless absolute.
    #[arg(long, default_value = "bounds.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Parser, Serialize)]
pub struct SolveFiniteArgs {
    /// Number of vortices.
    #[arg(long)]
    pub n: u64,
    /// Number of coarse boxes.
    #[arg(long)]
    pub m: usize,
    /// Scaled inverse temperature beta lambda^2 N.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    /// Vortex strength (default mean-field scaling 1/N).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    #[arg(long, default_value_t = 1e-11)]
    pub tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,
    /// Solution file (JSON), relative to --out-dir unless absolute.
    #[arg(long, default_value = "solution.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Parser, Serialize)]
pub struct SolvePdeArgs {
    /// Scaled inverse temperature of the limit equation.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    /// Mesh resolution per side (>= 16).
    #[arg(long, default_value_t = 64)]
    pub mesh: usize,
    /// Solve the limit equation (self-energy field off). Default.
    #[arg(long, conflicts_with = "finite_n")]
    pub limit: bool,
    /// Solve the finite-N variant with the self-energy field at matched
    /// coarse-graining M = N.
    #[arg(long)]
    pub finite_n: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    #[arg(long, default_value_t = 1e-11)]
    pub tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Parser, Serialize)]
pub struct SinhPoissonArgs {
    /// Scaled inverse temperature; the sign orients the two species.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 64)]
    pub mesh: usize,
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    #[arg(long, default_value_t = 1e-11)]
    pub tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Parser, Serialize)]
pub struct ConvergeArgs {
    /// Comma-separated vortex counts.
    #[arg(long, default_value = "64,128,256,512")]
    pub n_list: String,
    /// Scaled inverse temperature.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    /// Continuum mesh resolution (must be divisible by the box factorings).
    #[arg(long, default_value_t = 128)]
    pub mesh: usize,
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    /// Table file (CSV), relative to --out-dir unless absolute.
    #[arg(long, default_value = "converge.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Parser, Serialize)]
pub struct DecayArgs {
    /// Comma-separated vortex counts; each runs with M = N boxes.
    #[arg(long, default_value = "64,128,256,512")]
    pub n_list: String,
    /// Scaled inverse temperature.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    /// Table file (CSV), relative to --out-dir unless absolute.
    #[arg(long, default_value = "decay.csv")]
    pub out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match commands::run(cli) {
        Ok(()) => {}
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            std::process::exit(failure.code);
        }
    }
}
