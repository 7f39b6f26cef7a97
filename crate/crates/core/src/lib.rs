//! Click propensity estimation for unbiased learning-to-rank.
//!
//! Propensities (the probability that a result at a given rank is examined)
//! are estimated without interventions, from query-document pairs that
//! naturally appeared at different ranks. The crate covers:
//!
//! * [`ingest`]: JSONL impression logs to filtered [`PairGroup`]s.
//! * [`mle`]: conditional maximum likelihood, per-rank or with knot
//!   interpolation in log-log space.
//! * [`ratio`]: clicks-per-impression ratios between two fixed ranks.
//! * [`em`]: a position-based-model EM baseline.
//! * [`simulator`]: synthetic logs with a known propensity curve.
//! * [`eval`]: inverse-propensity weights, unbiased losses, DCG and
//!   fixed-rank AUC with bootstrap error bars.
//!
//! ```
//! use propensity_core::{fit, simulate_pairs, MleConfig, SimConfig};
//!
//! let sim = simulate_pairs(&SimConfig { n_pairs_target: 5_000, ..Default::default() }).unwrap();
//! let report = fit(&sim.groups, &MleConfig::default()).unwrap();
//! assert!(report.converged);
//! assert_eq!(report.curve.values()[0], 1.0);
//! ```

pub mod domain;
pub mod em;
pub mod error;
pub mod eval;
pub mod formats;
pub mod ingest;
pub mod interp;
pub mod mle;
pub mod optim;
pub mod ratio;
pub mod simulator;
pub mod stats;

pub use domain::{
    normalize_curve, Appearance, EstimationReport, ImpressionRecord, KnotSpec, Method, PairGroup, Platform, Price,
    PropensityCurve, DEFAULT_KNOTS, DEFAULT_RANK_MAX,
};
pub use em::{em_fit, em_fit_with, EmConfig, PerPairRelevance, RelevanceUpdater};
pub use error::{Error, Result};
pub use eval::{
    bootstrap_compare, dcg, dcg_ipw, fixed_rank_auc, ipw_weight, unbiased_loss, EvalReport, EvalRow, ScoredImpression,
    DEFAULT_BOOTSTRAP, DEFAULT_EVAL_RANKS,
};
pub use ingest::{extract, group_pairs, parse_log, select_estimation_pairs, ExtractionConfig, ExtractionSummary, SelectionMode};
pub use mle::{fit, log_likelihood, log_likelihood_gradient, MleConfig, Parametrization};
pub use ratio::{ratio_estimate, ratio_matrix, RatioEstimate};
pub use simulator::{simulate_pairs, simulate_raw_groups, true_curve, true_propensity, SimConfig, Simulation};
