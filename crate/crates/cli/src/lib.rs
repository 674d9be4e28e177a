//! Command-line front end: `simulate`, `infer`, `synthesize`, `evaluate` and
//! `bench` subcommands over JSON files, plus the benchmark harness.

pub mod bench;
pub mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{run, CliError};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// `synthesize` hit the MM iteration cap; the policy is still written.
    pub const MAX_ITERS: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INFERENCE: i32 = 3;
    pub const INFEASIBLE: i32 = 4;
    pub const INTERNAL: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(
    name = "mmlqr",
    version,
    about = "Learn LQR policies from rollout data via posterior sampling and sequential SDPs"
)]
pub struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Output file (a directory for `bench`); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn as_filter(&self) -> &'static str {
        match self {
            LogLevel::Error => "error",
            LogLevel::Warn => "warn",
            LogLevel::Info => "info",
            LogLevel::Debug => "debug",
            LogLevel::Trace => "trace",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out random inputs on a system and write the dataset.
    Simulate(SimulateArgs),
    /// Draw posterior samples from the confidence region of a dataset.
    Infer(InferArgs),
    /// Synthesize a gain from a sample file.
    Synthesize(SynthesizeArgs),
    /// Score a policy against a true system.
    Evaluate(EvaluateArgs),
    /// Run the benchmark grid and write per-cell and summary CSVs.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// State dimension of the default Toeplitz system.
    #[arg(long, default_value_t = 3)]
    pub nx: usize,
    /// Number of rollouts N.
    #[arg(long)]
    pub rollouts: usize,
    /// Rollout horizon T.
    #[arg(long, default_value_t = 6)]
    pub horizon: usize,
    /// System JSON (`A`, `B`, `Pi`) to simulate instead of the Toeplitz system.
    #[arg(long)]
    pub system: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Dataset JSON written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Confidence level c in percent.
    #[arg(long, default_value_t = 95.0)]
    pub confidence: f64,
    /// Number of samples M.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Candidate pool size; defaults to 20·M.
    #[arg(long)]
    pub pool: Option<usize>,
    /// Known noise covariance: `identity` or a JSON matrix file.
    #[arg(long)]
    pub known_pi: Option<String>,
    /// Treat the noise covariance as unknown and sample with Gibbs.
    #[arg(long)]
    pub gibbs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Nominal,
    Cl,
    Proposed,
    AlternateS,
}

impl From<MethodArg> for bench::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Nominal => bench::Method::Nominal,
            MethodArg::Cl => bench::Method::Cl,
            MethodArg::Proposed => bench::Method::Proposed,
            MethodArg::AlternateS => bench::Method::AlternateS,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Sample-set JSON written by `infer`.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Proposed)]
    pub method: MethodArg,
    /// Q = q_scale·I.
    #[arg(long, default_value_t = 1e-3)]
    pub q_scale: f64,
    /// R = r_scale·I.
    #[arg(long, default_value_t = 1.0)]
    pub r_scale: f64,
    /// MM convergence tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Keep a shared Lyapunov certificate across all samples.
    #[arg(long)]
    pub certificate: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Policy JSON written by `synthesize`.
    #[arg(long)]
    pub policy: PathBuf,
    /// True system JSON.
    #[arg(long)]
    pub truth: PathBuf,
    /// Dataset for drawing fresh robustness samples.
    #[arg(long, requires = "robust_samples")]
    pub data: Option<PathBuf>,
    /// Number of fresh confidence-region samples for the unstable fraction.
    #[arg(long, requires = "data")]
    pub robust_samples: Option<usize>,
    #[arg(long, default_value_t = 95.0)]
    pub confidence: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark configuration JSON; flags below are ignored when given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub nx: usize,
    /// Rollout counts N.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 20, 80])]
    pub rollouts: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    pub horizon: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Samples per cell M.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 95.0)]
    pub confidence: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Nominal, MethodArg::Cl, MethodArg::Proposed])]
    pub methods: Vec<MethodArg>,
    /// Fresh samples per cell for the unstable fraction.
    #[arg(long, default_value_t = 0)]
    pub robust_samples: usize,
    /// Sweep over these sample counts instead of `--samples`.
    #[arg(long, value_delimiter = ',')]
    pub sweep_m: Option<Vec<usize>>,
    /// Unknown noise covariance (Gibbs sampling).
    #[arg(long)]
    pub gibbs: bool,
}
