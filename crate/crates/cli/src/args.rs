use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "qcontrib", version, about = "CVaR risk contributions: exact, Monte Carlo and simulated quantum estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact VaR, CVaR and contributions by enumerating the discretized model.
    Exact(ExactArgs),
    /// Classical Monte Carlo estimates with standard errors.
    Mc(McArgs),
    /// The simulated quantum pipeline: tail marking, amplification, payload, estimation.
    Qsim(QsimArgs),
    /// Closed-form query budgets and the advantage condition.
    Budget(BudgetArgs),
    /// Exact, Monte Carlo and quantum results side by side, with statistical checks.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InstanceArgs {
    /// Portfolio file (.toml or .json). Its content, not its path, enters the
    /// config hash.
    #[arg(long)]
    #[serde(skip)]
    pub portfolio: PathBuf,
    /// VaR level alpha; without --threshold, V_alpha is also the CVaR threshold.
    #[arg(long, value_parser = open_unit)]
    pub alpha: Option<f64>,
    /// Loss threshold v for CVaR and its contributions.
    #[arg(long, value_parser = finite)]
    pub threshold: Option<f64>,
    /// Number of points of the discretized systematic factor.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(2..))]
    pub grid_size: u32,
    /// Half-width D of the factor grid [-D, D].
    #[arg(long, default_value_t = 4.0, value_parser = positive)]
    pub halfwidth: f64,
    /// Write the result table as CSV to this path.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExactArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Exact standard normal factor.
    Exact,
    /// Inverse-CDF factor through the oracles' normal approximation.
    InverseCdf,
    /// The oracles' discretized factor.
    Discrete,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct McSettings {
    /// Scenarios to draw.
    #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    /// Scenarios per independently seeded batch.
    #[arg(long, default_value_t = 1 << 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    /// Factor law; `discrete` draws from the same grid the exact enumeration
    /// uses, so the two agree up to sampling error.
    #[arg(long, value_enum, default_value_t = Sampling::Discrete)]
    pub sampling: Sampling,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct McArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub mc: McSettings,
    #[arg(long, env = "QCONTRIB_SEED", default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Exact,
    Surrogate,
    PerGroupAe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationArg {
    Uniform,
    TruncatedGaussian,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QsimSettings {
    #[arg(long, value_enum, default_value_t = Estimator::Exact)]
    pub estimator: Estimator,
    /// Target accuracy for every contribution.
    #[arg(long, value_parser = positive)]
    pub eps: f64,
    /// Failure probability of the estimator.
    #[arg(long, default_value_t = 0.05, value_parser = open_unit)]
    pub delta: f64,
    /// User-supplied bound on the conditional standard deviations; computed
    /// exactly when omitted.
    #[arg(long, value_parser = positive)]
    pub sigma_max: Option<f64>,
    /// Register width in binary digits.
    #[arg(long, default_value_t = 64)]
    pub total_bits: u32,
    /// Digits after the binary point.
    #[arg(long, default_value_t = 48)]
    pub fraction_bits: u32,
    /// Unsigned registers (signed two's complement by default).
    #[arg(long)]
    pub unsigned: bool,
    /// Largest number of tail-marking calls one amplified preparation may use.
    #[arg(long, default_value_t = qcontrib::amplify::DEFAULT_MAX_LENGTH)]
    pub max_length: usize,
    /// Surrogate perturbation law.
    #[arg(long, value_enum, default_value_t = PerturbationArg::Uniform)]
    pub perturbation: PerturbationArg,
    /// Shots per Grover power in per-group amplitude estimation.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub shots: u64,
    /// Write the amplified state as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub state_csv: Option<PathBuf>,
    /// Write the amplification schedule as JSON.
    #[arg(long)]
    #[serde(skip)]
    pub schedule_json: Option<PathBuf>,
    /// Exit with status 4 when an estimate misses its truth by more than eps.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QsimArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub qsim: QsimSettings,
    #[arg(long, env = "QCONTRIB_SEED", default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub mc: McSettings,
    #[command(flatten)]
    pub qsim: QsimSettings,
    #[arg(long, env = "QCONTRIB_SEED", default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BudgetArgs {
    #[arg(long, value_parser = positive)]
    pub sigma_max: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub eps: Option<f64>,
    /// Tail probability p.
    #[arg(long, value_parser = unit_upper_closed)]
    pub p: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_gr: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_obl: u64,
    #[arg(long, default_value_t = 0.01, value_parser = open_unit)]
    pub delta: f64,
    #[arg(long, value_parser = positive)]
    pub c_max: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub e_max: Option<f64>,
    /// Typical conditional default probability; enables the regime condition.
    #[arg(long, value_parser = open_unit)]
    pub pbar: Option<f64>,
    /// Typical exposure (regime mode).
    #[arg(long, value_parser = positive)]
    pub ebar: Option<f64>,
    /// C_max/eps in regime mode; sigma_max, c_max, e_max and eps then follow
    /// from pbar and ebar.
    #[arg(long, value_parser = positive)]
    pub cmax_over_eps: Option<f64>,
    /// Factor by which one side must exceed the other.
    #[arg(long, default_value_t = qcontrib::complexity::DEFAULT_ADVANTAGE_THRESHOLD, value_parser = at_least_one)]
    pub advantage_threshold: f64,
    /// Comma-separated eps values for the sweep table.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub sweep_eps: Vec<f64>,
    /// Comma-separated group counts for the sweep table.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u64).range(1..))]
    pub sweep_n_gr: Vec<u64>,
    /// Write the sweep table as CSV to this path.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
}

fn number(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("`{s}` is not a number: {e}"))
}

fn finite(s: &str) -> Result<f64, String> {
    let x = number(s)?;
    if x.is_finite() { Ok(x) } else { Err(format!("{x} is not finite")) }
}

fn positive(s: &str) -> Result<f64, String> {
    let x = finite(s)?;
    if x > 0.0 { Ok(x) } else { Err(format!("{x} is not positive")) }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let x = number(s)?;
    if x > 0.0 && x < 1.0 { Ok(x) } else { Err(format!("{x} is not in (0, 1)")) }
}

fn unit_upper_closed(s: &str) -> Result<f64, String> {
    let x = number(s)?;
    if x > 0.0 && x <= 1.0 { Ok(x) } else { Err(format!("{x} is not in (0, 1]")) }
}

fn at_least_one(s: &str) -> Result<f64, String> {
    let x = finite(s)?;
    if x >= 1.0 { Ok(x) } else { Err(format!("{x} is below 1")) }
}
