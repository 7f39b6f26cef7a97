//! Data types shared by every estimator: log records, per-pair appearance
//! groups, propensity curves and estimation reports.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Deepest rank kept by default.
pub const DEFAULT_RANK_MAX: u32 = 500;

/// Knot ranks used by the interpolated estimator when none are given.
pub const DEFAULT_KNOTS: [u32; 10] = [1, 2, 4, 8, 20, 50, 100, 200, 300, 500];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Web,
    Mobile,
}

impl std::str::FromStr for Platform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "web" => Ok(Platform::Web),
            "mobile" => Ok(Platform::Mobile),
            other => Err(Error::Config(format!("unknown platform `{other}` (expected web or mobile)"))),
        }
    }
}

/// Item price in minor currency units. Accepts a JSON number or a decimal
/// string; two prices are the same only if they are exactly equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Price(f64);

impl Price {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Price(value))
        } else {
            Err(Error::Domain(format!("price must be finite, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Serialize for Price {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        let value = match Raw::deserialize(deserializer)? {
            Raw::Number(v) => v,
            Raw::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("price `{s}` is not a decimal")))?,
        };
        Price::new(value).map_err(serde::de::Error::custom)
    }
}

/// One logged impression of a document for a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub query_id: String,
    pub doc_id: String,
    pub rank: u32,
    pub clicked: bool,
    pub day: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<Price>,
    pub is_auction: bool,
    pub platform: Platform,
    pub sort_type: String,
}

/// A single (rank, click) observation of a query-document pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Appearance {
    pub rank: u32,
    pub clicked: bool,
}

impl Appearance {
    pub fn new(rank: u32, clicked: bool) -> Self {
        Appearance { rank, clicked }
    }
}

/// All appearances of one query-document pair. The likelihood factorizes
/// over these groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGroup {
    pub query_id: String,
    pub doc_id: String,
    /// Set when the group was formed under the same-day rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<i64>,
    pub appearances: Vec<Appearance>,
}

impl PairGroup {
    pub fn new(query_id: impl Into<String>, doc_id: impl Into<String>, appearances: Vec<Appearance>) -> Self {
        PairGroup {
            query_id: query_id.into(),
            doc_id: doc_id.into(),
            day: None,
            appearances,
        }
    }

    /// Shorthand used heavily in tests: `(rank, clicked)` tuples.
    pub fn from_pairs(query_id: &str, doc_id: &str, appearances: &[(u32, bool)]) -> Self {
        PairGroup::new(
            query_id,
            doc_id,
            appearances.iter().map(|&(r, c)| Appearance::new(r, c)).collect(),
        )
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.query_id, &self.doc_id)
    }

    pub fn distinct_ranks(&self) -> BTreeSet<u32> {
        self.appearances.iter().map(|a| a.rank).collect()
    }

    pub fn n_clicks(&self) -> usize {
        self.appearances.iter().filter(|a| a.clicked).count()
    }

    pub fn max_rank(&self) -> u32 {
        self.appearances.iter().map(|a| a.rank).max().unwrap_or(0)
    }
}

/// Which estimator produced a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Interpolated,
    Ratio,
    Em,
    TrueSim,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Direct => "direct",
            Method::Interpolated => "interpolated",
            Method::Ratio => "ratio",
            Method::Em => "em",
            Method::TrueSim => "true_sim",
        };
        f.write_str(name)
    }
}

/// Propensity per rank `1..=rank_max`, stored as ratios to rank 1.
///
/// Only ratios between ranks are identifiable from click data, so every
/// curve is normalized with `values[0] == 1`. Values need not be monotone.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityCurve {
    values: Vec<f64>,
    method: Method,
}

impl PropensityCurve {
    /// Wraps already-normalized values. Fails unless every value is positive
    /// and finite and the first is exactly 1.
    pub fn new(values: Vec<f64>, method: Method) -> Result<Self> {
        check_positive(&values)?;
        if values[0] != 1.0 {
            return Err(Error::Domain(format!(
                "curve must be normalized to 1 at rank 1, got {}",
                values[0]
            )));
        }
        Ok(PropensityCurve { values, method })
    }

    /// Normalizes arbitrary positive values by the rank-1 entry.
    pub fn normalized(values: &[f64], method: Method) -> Result<Self> {
        check_positive(values)?;
        let first = values[0];
        let mut out: Vec<f64> = values.iter().map(|v| v / first).collect();
        out[0] = 1.0;
        Ok(PropensityCurve { values: out, method })
    }

    pub fn rank_max(&self) -> u32 {
        self.values.len() as u32
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Propensity at a 1-based rank.
    pub fn at(&self, rank: u32) -> Result<f64> {
        if rank == 0 || rank > self.rank_max() {
            return Err(Error::Domain(format!(
                "rank {rank} outside curve range 1..={}",
                self.rank_max()
            )));
        }
        Ok(self.values[rank as usize - 1])
    }

    /// Log-propensity per rank.
    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln()).collect()
    }

    /// Multiplies every value by `factor`, yielding an unnormalized vector.
    pub fn scaled(&self, factor: f64) -> Vec<f64> {
        self.values.iter().map(|v| v * factor).collect()
    }
}

fn check_positive(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Domain("propensity curve must not be empty".into()));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Domain(format!(
            "propensity at rank {} must be positive and finite, got {v}",
            i + 1
        )));
    }
    Ok(())
}

/// Divides every value by the first one.
pub fn normalize_curve(values: &[f64], method: Method) -> Result<PropensityCurve> {
    PropensityCurve::normalized(values, method)
}

/// Ranks carrying free parameters in the interpolated estimator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnotSpec {
    knots: Vec<u32>,
}

impl KnotSpec {
    pub fn new(knots: Vec<u32>, rank_max: u32) -> Result<Self> {
        if knots.first() != Some(&1) {
            return Err(Error::Config("first knot must be rank 1".into()));
        }
        if knots.last() != Some(&rank_max) {
            return Err(Error::Config(format!("last knot must equal rank_max ({rank_max})")));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("knots must be strictly increasing".into()));
        }
        Ok(KnotSpec { knots })
    }

    /// The default knot list cut at `rank_max`, which is always the last knot.
    pub fn default_for(rank_max: u32) -> Self {
        let mut knots: Vec<u32> = DEFAULT_KNOTS.iter().copied().filter(|&k| k < rank_max).collect();
        knots.push(rank_max);
        KnotSpec { knots }
    }

    pub fn knots(&self) -> &[u32] {
        &self.knots
    }

    pub fn rank_max(&self) -> u32 {
        *self.knots.last().expect("knot list is never empty")
    }
}

impl Default for KnotSpec {
    fn default() -> Self {
        KnotSpec::default_for(DEFAULT_RANK_MAX)
    }
}

/// Fitted curve plus optimizer diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub curve: PropensityCurve,
    pub final_log_likelihood: f64,
    pub iterations: usize,
    /// For the likelihood estimators: projected-gradient max-norm reached the
    /// tolerance. For EM: relative log-likelihood change fell below tolerance.
    pub converged: bool,
    pub n_pairs_used: usize,
    /// Ranks whose value was filled by log-log interpolation rather than
    /// carrying their own parameter.
    pub n_interpolated_ranks: usize,
    /// Objective value after every accepted iteration, starting with the
    /// initial point.
    pub trace: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let c = normalize_curve(&[2.0, 1.0, 0.5], Method::Direct).unwrap();
        assert_eq!(c.values(), &[1.0, 0.5, 0.25]);
        let c = normalize_curve(&[1.0, 1.0, 1.0], Method::Direct).unwrap();
        assert_eq!(c.values(), &[1.0, 1.0, 1.0]);
        let c = normalize_curve(&[0.5, 0.5, 0.1], Method::Direct).unwrap();
        assert_eq!(c.values(), &[1.0, 1.0, 0.2]);
    }

    #[test]
    fn normalize_rejects_non_positive() {
        assert!(matches!(normalize_curve(&[1.0, 0.0], Method::Direct), Err(Error::Domain(_))));
        assert!(matches!(normalize_curve(&[1.0, -2.0], Method::Direct), Err(Error::Domain(_))));
        assert!(matches!(normalize_curve(&[], Method::Direct), Err(Error::Domain(_))));
    }

    #[test]
    fn new_requires_normalized() {
        assert!(PropensityCurve::new(vec![2.0, 1.0], Method::Direct).is_err());
        assert!(PropensityCurve::new(vec![1.0, 3.0], Method::Direct).is_ok());
    }

    #[test]
    fn curve_lookup_bounds() {
        let c = PropensityCurve::new(vec![1.0, 0.5, 0.25], Method::Direct).unwrap();
        assert_eq!(c.at(3).unwrap(), 0.25);
        assert!(c.at(0).is_err());
        assert!(c.at(4).is_err());
    }

    #[test]
    fn knot_spec_validation() {
        assert!(KnotSpec::new(vec![1, 2, 4, 500], 500).is_ok());
        assert!(KnotSpec::new(vec![2, 4, 500], 500).is_err());
        assert!(KnotSpec::new(vec![1, 4, 4, 500], 500).is_err());
        assert!(KnotSpec::new(vec![1, 4, 200], 500).is_err());
        assert_eq!(KnotSpec::default().knots(), &DEFAULT_KNOTS);
        assert_eq!(KnotSpec::default_for(60).knots(), &[1, 2, 4, 8, 20, 50, 60]);
        assert_eq!(KnotSpec::default_for(50).knots(), &[1, 2, 4, 8, 20, 50]);
    }

    #[test]
    fn price_accepts_number_and_string() {
        let a: Price = serde_json::from_str("1250").unwrap();
        let b: Price = serde_json::from_str("\"1250.0\"").unwrap();
        assert_eq!(a, b);
        assert!(serde_json::from_str::<Price>("\"12a\"").is_err());
    }

    fn positive_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1e-3f64..1e3, 1..40)
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in positive_vec()) {
            let once = normalize_curve(&v, Method::Direct).unwrap();
            let twice = normalize_curve(once.values(), Method::Direct).unwrap();
            prop_assert_eq!(once.values(), twice.values());
        }

        #[test]
        fn normalize_is_scale_invariant(v in positive_vec(), c in 1e-3f64..1e3) {
            let base = normalize_curve(&v, Method::Direct).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let other = normalize_curve(&scaled, Method::Direct).unwrap();
            for (a, b) in base.values().iter().zip(other.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
