//! Optional TOML configuration. Every key mirrors a flag of the same name;
//! flags given on the command line take precedence.
//!
//! ```toml
//! threads = 4
//!
//! [simulate]
//! pairs = 40000
//! seed = 42
//!
//! [estimate]
//! method = "interp"
//! knots = [1, 2, 4, 8, 20, 50, 100, 200, 300, 500]
//! ```

use std::path::Path;

use propensity_core::Platform;
use serde::Deserialize;

use crate::args::{MethodArg, Mode};
use crate::failure::{CmdResult, Failure};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub simulate: SimulateConfig,
    pub extract: ExtractConfig,
    pub estimate: EstimateConfig,
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateConfig {
    pub pairs: Option<usize>,
    pub seed: Option<u64>,
    pub rank_max: Option<u32>,
    pub rank_spread_divisor: Option<f64>,
    pub base_ctr_scale: Option<f64>,
    pub base_ctr_exponent: Option<f64>,
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExtractConfig {
    pub allow_cross_day: Option<bool>,
    pub allow_price_change: Option<bool>,
    pub include_auctions: Option<bool>,
    pub platform: Option<Platform>,
    pub sort_type: Option<String>,
    pub mode: Option<Mode>,
    pub skip_selection: Option<bool>,
    pub rank_max: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EstimateConfig {
    pub method: Option<MethodArg>,
    pub knots: Option<Vec<u32>>,
    pub rank_max: Option<u32>,
    pub smoothing: Option<f64>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub min_rank_observations: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateConfig {
    pub ranks: Option<Vec<u32>>,
    pub bootstrap: Option<usize>,
    pub seed: Option<u64>,
    pub pairs: Option<Vec<String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }
}
