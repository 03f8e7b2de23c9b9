use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hmcvol::cooling::CoolingConfig;
use hmcvol::sampler::ChainConfig;

#[derive(Debug, Parser)]
#[command(name = "hmcvol", version, about = "RHMC sampling and volume estimation for polytopes {x : Ax > b}")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw samples from e^{-αφ} restricted to the polytope (uniform at α = 0).
    Sample(SampleArgs),
    /// Estimate the volume by Gaussian cooling.
    Volume(VolumeArgs),
    /// Run the numerical verification suite; exit 1 if a hard check fails.
    Verify(VerifyArgs),
    /// Time the per-step kernels over an (n, m) grid.
    Bench(BenchArgs),
    /// Write gnuplot data files from earlier outputs.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; HMCVOL_THREADS takes precedence. Defaults to available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ChainArgs {
    /// Lewis exponent in [2, 4); default 4 − 1/ln m.
    #[arg(long)]
    pub p: Option<f64>,
    /// Niceness constant c ≥ 1; default 4√(ln m).
    #[arg(long)]
    pub c: Option<f64>,
    /// Fixed step size, overriding the formula.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "ode-steps", default_value_t = 16)]
    pub ode_steps: usize,
    /// Accept every feasible trajectory without the Metropolis test.
    #[arg(long = "no-metropolis")]
    pub no_metropolis: bool,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long = "tol-fp", default_value_t = 1e-12)]
    pub tol_fp: f64,
    #[arg(long = "max-fp-iter", default_value_t = 50)]
    pub max_fp_iter: usize,
    #[arg(long = "lewis-tol", default_value_t = 1e-12)]
    pub lewis_tol: f64,
}

impl ChainArgs {
    pub fn to_config(&self, seed: u64) -> ChainConfig {
        ChainConfig {
            p: self.p,
            c: self.c,
            delta_override: self.delta,
            n_ode_steps: self.ode_steps,
            metropolis: !self.no_metropolis,
            seed,
            n_burnin: self.burnin,
            thinning: self.thin,
            tol_fp: self.tol_fp,
            max_fp_iter: self.max_fp_iter,
            lewis_tol: self.lewis_tol,
            ..ChainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub polytope: PathBuf,
    /// Samples kept per chain after burn-in and thinning.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Independent chains, one RNG stream each.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct VolumeArgs {
    #[arg(long)]
    pub polytope: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Barrier parameter used by the schedule; default α₀n.
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long = "c-sigma0", default_value_t = 1.0)]
    pub c_sigma0: f64,
    #[arg(long = "c-k", default_value_t = 1.0)]
    pub c_k: f64,
    #[arg(long = "max-phases", default_value_t = 10_000)]
    pub max_phases: usize,
    #[arg(long = "phase-burnin", default_value_t = 10)]
    pub phase_burnin: usize,
    #[arg(long, default_value_t = 10)]
    pub batches: usize,
    #[arg(long = "max-rel-se", default_value_t = 0.5)]
    pub max_rel_se: f64,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub common: Common,
}

impl VolumeArgs {
    pub fn cooling_config(&self) -> CoolingConfig {
        CoolingConfig {
            epsilon: self.epsilon,
            nu: self.nu,
            c_sigma0: self.c_sigma0,
            c_k: self.c_k,
            max_phases: self.max_phases,
            seed: self.common.seed,
            phase_burnin: self.phase_burnin,
            batches: self.batches,
            max_rel_se: self.max_rel_se,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Check a single polytope instead of the generated corpus.
    #[arg(long)]
    pub polytope: Option<PathBuf>,
    /// Run one check family only.
    #[arg(long)]
    pub only: Option<String>,
    /// Random polytopes in the generated corpus.
    #[arg(long, default_value_t = 50)]
    pub random: usize,
    /// Random directions per check.
    #[arg(long, default_value_t = 8)]
    pub trials: usize,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long = "lewis-tol", default_value_t = 1e-12)]
    pub lewis_tol: f64,
    #[arg(long, default_value_t = 50.0)]
    pub c0: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Dimensions of the grid.
    #[arg(long = "grid-n", value_delimiter = ',', default_values_t = [4usize, 8])]
    pub grid_n: Vec<usize>,
    /// Constraint counts of the grid.
    #[arg(long = "grid-m", value_delimiter = ',', default_values_t = [16usize, 64])]
    pub grid_m: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Per-sample trace of one or all columns of a samples CSV.
    Trace,
    /// σ², α and log-ratio per phase of a volume trace JSON.
    Schedule,
    /// Energy drift against step size for a polytope.
    EnergyDrift,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Samples CSV (trace) or volume trace JSON (schedule).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Polytope for the energy-drift dataset.
    #[arg(long)]
    pub polytope: Option<PathBuf>,
    /// Column of the samples CSV, e.g. x2; all columns when omitted.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[command(flatten)]
    pub common: Common,
}
