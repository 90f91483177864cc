use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Multivariate Hawkes processes: simulation, estimation, diagnostics and
/// microstructure applications.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "hawkes", version)]
pub struct Cli {
    /// Log verbosity (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a model spec; writes events.csv (and genealogy.csv for the cluster algorithm).
    Simulate(SimulateArgs),
    /// Fit a model to events; writes model.txt, parameters.csv, diagnostics.csv and fit.json.
    Fit(FitArgs),
    /// Stationary statistics of a model spec: mean intensity, covariance, causality, diffusion.
    Stats(StatsArgs),
    /// Time-change goodness of fit; writes residuals.csv and ks.csv.
    Gof(GofArgs),
    /// Branching-ratio estimates side by side for a 1D stream; writes reflexivity.csv.
    Reflexivity(ReflexivityArgs),
    /// Signature plot of the price built from an up and a down component.
    Signature(SignatureArgs),
    /// Epps covariation between two prices built from component pairs.
    Epps(EppsArgs),
    /// Monte Carlo meta-order impact curve; writes impact.csv and impact_drift.csv.
    Impact(ImpactArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Output directory (created if missing); manifest.json is written there.
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmArg {
    Thinning,
    TimeChange,
    Cluster,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Model spec file (`hawkes-model v1`).
    #[arg(long)]
    #[serde(skip)]
    pub model: PathBuf,
    #[arg(long)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "thinning")]
    pub algorithm: AlgorithmArg,
    #[arg(long, default_value_t = 0.0)]
    pub burn_in: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    Csv,
    Ndjson,
}

/// Event input and ingestion options.
#[derive(Debug, Args, Serialize)]
pub struct EventArgs {
    /// Event file: CSV `time,component[,mark]` or NDJSON `{"t","c","m"}`.
    #[arg(long)]
    #[serde(skip)]
    pub events: PathBuf,
    /// Input format; inferred from the extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Component labels, e.g. `up=0,down=1`.
    #[arg(long)]
    pub labels: Option<String>,
    /// Seconds per input time unit.
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
    /// Session window `start,end` in scaled units; times are shifted to start.
    #[arg(long)]
    pub session: Option<String>,
    /// Jitter tied timestamps by up to this amplitude.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long, default_value_t = 0, requires = "jitter")]
    pub jitter_seed: u64,
    /// Jitter every event (randomization of throttled feeds).
    #[arg(long, requires = "jitter")]
    pub dejitter: bool,
    /// Record length; defaults to the session length or the last event time.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Dimension; defaults to the label count or the largest component + 1.
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Mle,
    Em,
    WienerHopf,
    Contrast,
    Moments,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    Exponential,
    PowerLaw,
    Histogram,
    SymmetricBivariate,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: EventArgs,
    #[arg(long, value_enum, default_value = "mle")]
    pub method: MethodArg,
    /// Kernel family (parametric methods) or `histogram` (EM).
    #[arg(long, value_enum, default_value = "exponential")]
    pub family: FamilyArg,
    /// Exponential decay handling: `free`, `shared` or a fixed value.
    #[arg(long, default_value = "free")]
    pub beta: String,
    /// Kernel support for non-parametric methods.
    #[arg(long)]
    pub support: Option<f64>,
    /// Histogram bins (EM histogram, contrast).
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Quadrature nodes (Wiener-Hopf).
    #[arg(long, default_value_t = 64)]
    pub nodes: usize,
    /// L1 penalty (contrast) or roughness penalty (EM histogram).
    #[arg(long, default_value_t = 0.0)]
    pub penalty: f64,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    #[serde(skip)]
    pub model: PathBuf,
    /// Largest covariance lag; defaults to 10 kernel time scales.
    #[arg(long)]
    pub max_lag: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub lag_points: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct GofArgs {
    #[arg(long)]
    #[serde(skip)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: EventArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ReflexivityArgs {
    #[command(flatten)]
    pub input: EventArgs,
    /// Comma-separated subset of mle-exponential, mle-power-law, wiener-hopf, variance-ratio.
    #[arg(long, default_value = "mle-exponential,mle-power-law,wiener-hopf,variance-ratio")]
    pub methods: String,
    #[arg(long, default_value_t = 100)]
    pub windows: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ScaleArgs {
    /// Comma-separated sampling scales τ.
    #[arg(long)]
    pub taus: String,
    /// Currency per tick.
    #[arg(long, default_value_t = 1.0)]
    pub tick: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SignatureArgs {
    #[command(flatten)]
    pub input: EventArgs,
    #[arg(long, default_value_t = 0)]
    pub up: usize,
    #[arg(long, default_value_t = 1)]
    pub down: usize,
    #[command(flatten)]
    pub scales: ScaleArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EppsArgs {
    #[command(flatten)]
    pub input: EventArgs,
    /// Up and down components of asset A, e.g. `0,1`.
    #[arg(long, default_value = "0,1")]
    pub asset_a: String,
    #[arg(long, default_value = "2,3")]
    pub asset_b: String,
    #[command(flatten)]
    pub scales: ScaleArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ImpactArgs {
    /// Impact model file (`hawkes-him v1`).
    #[arg(long)]
    #[serde(skip)]
    pub config: PathBuf,
    /// Trading-schedule breaks, e.g. `0,10`.
    #[arg(long)]
    pub breaks: String,
    /// Trading rate on each schedule interval.
    #[arg(long)]
    pub rates: String,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Last grid time.
    #[arg(long)]
    pub until: f64,
    #[arg(long, default_value_t = 100)]
    pub grid_points: usize,
    #[command(flatten)]
    pub out: OutArgs,
}
