use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use propensity_core::Platform;
use serde::Deserialize;

/// Click propensity estimation from query-document pairs that naturally
/// appeared at several ranks.
#[derive(Debug, Parser)]
#[command(name = "propensity", version, about, propagate_version = true)]
pub struct Cli {
    /// Worker threads (defaults to the number of cores). Results do not
    /// depend on this.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// TOML file with defaults for any flag, keyed by flag name, in one table
    /// per subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic pairs with a known propensity curve.
    Simulate(SimulateArgs),
    /// Group an impression log into query-document pairs and select the ones
    /// usable for estimation.
    Extract(ExtractArgs),
    /// Estimate a propensity curve (or rank ratios) from pairs.
    Estimate(EstimateArgs),
    /// Add inverse-propensity weights to an impression log.
    Weights(WeightsArgs),
    /// Compare ranking models by fixed-rank AUC with bootstrap error bars.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Retained pairs (JSONL); standard output when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Ground-truth curve (CSV).
    #[arg(long, value_name = "FILE")]
    pub curve: Option<PathBuf>,
    /// Every simulated impression as a log record (JSONL), ready for `extract`.
    #[arg(long, value_name = "FILE")]
    pub impressions: Option<PathBuf>,
    /// Every simulated pair before selection (JSONL), for the EM and ratio
    /// estimators.
    #[arg(long, value_name = "FILE")]
    pub raw: Option<PathBuf>,
    /// Number of retained pairs to generate.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rank_max: Option<u32>,
    #[arg(long)]
    pub rank_spread_divisor: Option<f64>,
    #[arg(long)]
    pub base_ctr_scale: Option<f64>,
    #[arg(long)]
    pub base_ctr_exponent: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Two distinct ranks, exactly one click.
    Strict,
    /// At least two distinct ranks, at least one click.
    Relaxed,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Impression log (JSONL).
    #[arg(long, short)]
    pub input: PathBuf,
    /// Pair groups (JSONL); standard output when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Filter counts as JSON.
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
    /// Group appearances across days.
    #[arg(long)]
    pub allow_cross_day: bool,
    /// Keep groups whose price changed or is unknown.
    #[arg(long)]
    pub allow_price_change: bool,
    #[arg(long)]
    pub include_auctions: bool,
    #[arg(long)]
    pub platform: Option<Platform>,
    #[arg(long)]
    pub sort_type: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Emit every group that passed the filters, without the click/rank
    /// selection (input for `estimate --method em|ratio`).
    #[arg(long)]
    pub skip_selection: bool,
    /// Records ranked deeper than this are rejected.
    #[arg(long)]
    pub rank_max: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    /// Conditional likelihood, one parameter per observed rank.
    Direct,
    /// Conditional likelihood, power law between knot ranks.
    Interp,
    /// Clicks-per-impression ratio between two fixed ranks.
    Ratio,
    /// Position-based click model fitted by EM.
    Em,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Pair groups (JSONL).
    #[arg(long, short)]
    pub input: PathBuf,
    /// Curve CSV, or ratio CSV for `--method ratio`; standard output when
    /// omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Fit diagnostics as JSON.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Knot ranks for `interp`, comma separated, starting at 1.
    #[arg(long, value_delimiter = ',')]
    pub knots: Option<Vec<u32>>,
    #[arg(long)]
    pub rank_max: Option<u32>,
    #[arg(long)]
    pub rank_i: Option<u32>,
    #[arg(long)]
    pub rank_j: Option<u32>,
    /// All rank-pair ratios instead of a single one.
    #[arg(long)]
    pub matrix: bool,
    /// Add-alpha smoothing for `em`.
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Gradient tolerance (`direct`, `interp`) or relative log-likelihood
    /// change (`em`).
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// `direct` only: ranks seen fewer times are interpolated.
    #[arg(long)]
    pub min_rank_observations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    /// Propensity curve CSV.
    #[arg(long)]
    pub curve: PathBuf,
    /// Impressions (JSONL objects with a `rank` field).
    #[arg(long, short)]
    pub input: PathBuf,
    /// Standard output when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Scored impressions (JSONL).
    #[arg(long, short)]
    pub input: PathBuf,
    /// Report CSV; standard output when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Fixed ranks to evaluate, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<u32>>,
    /// Bootstrap resamples per rank.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model pair `a:b` reporting AUC(a) - AUC(b); repeatable. Defaults to
    /// every pair of models in name order.
    #[arg(long = "pair", value_name = "A:B")]
    pub pairs: Vec<String>,
}
