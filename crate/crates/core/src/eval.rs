//! Inverse-propensity weighting and bias-controlled offline evaluation.
//!
//! Losses over observed items are de-biased by weighting each item with the
//! reciprocal of its propensity. Model comparison uses AUC restricted to
//! impressions at a single rank, where position bias is constant, with
//! bootstrap resampling for error bars.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::PropensityCurve;
use crate::error::{Error, Result};
use crate::formats::format_sig;

/// Fixed ranks evaluated by default.
pub const DEFAULT_EVAL_RANKS: [u32; 6] = [1, 2, 4, 8, 16, 32];
pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Resamples allowed to come out single-class before giving up on a rank.
const MAX_REDRAWS: usize = 10_000;

/// `1 / p(rank)`.
pub fn ipw_weight(curve: &PropensityCurve, rank: u32) -> Result<f64> {
    Ok(1.0 / curve.at(rank)?)
}

/// Unbiased estimate of a full-information loss from the losses of observed
/// items only: `sum(delta / p(rank))`.
pub fn unbiased_loss(observed: &[(u32, f64)], curve: &PropensityCurve) -> Result<f64> {
    observed
        .iter()
        .map(|&(rank, delta)| Ok(delta * ipw_weight(curve, rank)?))
        .sum()
}

fn discount(rank: u32) -> f64 {
    1.0 / (f64::from(rank) + 1.0).log2()
}

/// Binary-relevance DCG summed over queries: `sum 1 / log2(rank + 1)` over
/// clicked ranks.
pub fn dcg(clicked_ranks_per_query: &[Vec<u32>]) -> Result<f64> {
    clicked_ranks_per_query
        .iter()
        .flatten()
        .map(|&r| {
            if r == 0 {
                Err(Error::Domain("rank must be >= 1".into()))
            } else {
                Ok(discount(r))
            }
        })
        .sum()
}

/// DCG with each click's relevance replaced by `1 / p(rank)`.
pub fn dcg_ipw(clicked_ranks_per_query: &[Vec<u32>], curve: &PropensityCurve) -> Result<f64> {
    clicked_ranks_per_query
        .iter()
        .flatten()
        .map(|&r| Ok(ipw_weight(curve, r)? * discount(r)))
        .sum()
}

/// An impression with scores from one or more ranking models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImpression {
    pub query_id: String,
    pub doc_id: String,
    pub rank: u32,
    pub clicked: bool,
    pub model_scores: BTreeMap<String, f64>,
}

/// Reads scored impressions from JSONL.
pub fn read_scored<R: BufRead>(reader: R) -> Result<Vec<ScoredImpression>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let imp: ScoredImpression = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if imp.rank < 1 {
            return Err(Error::Validation {
                line: line_no,
                message: "rank must be >= 1".into(),
            });
        }
        if imp.model_scores.is_empty() {
            return Err(Error::Validation {
                line: line_no,
                message: "at least one model score is required".into(),
            });
        }
        out.push(imp);
    }
    Ok(out)
}

/// AUC of `scores` separating `labels`, ties counted as one half.
///
/// Returns `None` when only one class is present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Scores of `model` and click labels of the impressions at `rank`.
fn rank_slice(impressions: &[ScoredImpression], rank: u32, model: &str) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, imp) in impressions.iter().enumerate().filter(|(_, imp)| imp.rank == rank) {
        let s = imp.model_scores.get(model).ok_or_else(|| Error::MissingScore {
            model: model.to_string(),
            line: i + 1,
        })?;
        scores.push(*s);
        labels.push(imp.clicked);
    }
    Ok((scores, labels))
}

/// AUC of `model` among impressions shown at exactly `fixed_rank`.
pub fn fixed_rank_auc(impressions: &[ScoredImpression], fixed_rank: u32, model: &str) -> Result<f64> {
    let (scores, labels) = rank_slice(impressions, fixed_rank, model)?;
    auc(&scores, &labels).ok_or(Error::SingleClass { rank: fixed_rank })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub rank: u32,
    pub model_a: String,
    pub model_b: String,
    /// Mean over resamples of `AUC(a) - AUC(b)`.
    pub mean_improvement: f64,
    /// Sample standard deviation over resamples.
    pub stddev: f64,
    /// Resamples that were redrawn because they contained a single class.
    pub redrawn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_bootstrap: usize,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
}

pub const EVAL_HEADER: &str = "rank,model_pair,mean_improvement,stddev,n_bootstrap";

impl EvalReport {
    pub fn merge(reports: Vec<EvalReport>) -> Option<EvalReport> {
        let mut it = reports.into_iter();
        let mut first = it.next()?;
        for r in it {
            first.rows.extend(r.rows);
        }
        Some(first)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{EVAL_HEADER}")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{}:{},{},{},{}",
                row.rank,
                row.model_a,
                row.model_b,
                format_sig(row.mean_improvement, 9),
                format_sig(row.stddev, 9),
                self.n_bootstrap
            )?;
        }
        w.flush()
    }
}

/// Random stream for resample `index` at `rank`.
fn resample_stream(seed: u64, rank: u32, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from(rank).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Bootstrap comparison of two models at each fixed rank.
///
/// For every rank the impressions at that rank are resampled with
/// replacement `n_bootstrap` times; each resample yields
/// `AUC(model_a) - AUC(model_b)`. Resamples with a single class are redrawn.
/// The result depends only on the inputs and `seed`.
pub fn bootstrap_compare(
    impressions: &[ScoredImpression],
    fixed_ranks: &[u32],
    model_a: &str,
    model_b: &str,
    n_bootstrap: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_bootstrap == 0 {
        return Err(Error::Config("n_bootstrap must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(fixed_ranks.len());
    for &rank in fixed_ranks {
        let (sa, labels) = rank_slice(impressions, rank, model_a)?;
        let (sb, _) = rank_slice(impressions, rank, model_b)?;
        if auc(&sa, &labels).is_none() {
            return Err(Error::SingleClass { rank });
        }
        let n = labels.len();

        let draws: Vec<Option<(f64, usize)>> = (0..n_bootstrap as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = resample_stream(seed, rank, b);
                let mut xa = vec![0.0; n];
                let mut xb = vec![0.0; n];
                let mut xl = vec![false; n];
                for redraws in 0..MAX_REDRAWS {
                    for k in 0..n {
                        let i = rng.random_range(0..n);
                        xa[k] = sa[i];
                        xb[k] = sb[i];
                        xl[k] = labels[i];
                    }
                    if let (Some(a), Some(bb)) = (auc(&xa, &xl), auc(&xb, &xl)) {
                        return Some((a - bb, redraws));
                    }
                }
                None
            })
            .collect();

        let mut diffs = Vec::with_capacity(n_bootstrap);
        let mut redrawn = 0;
        for d in draws {
            let (diff, r) = d.ok_or(Error::SingleClass { rank })?;
            diffs.push(diff);
            redrawn += r;
        }
        let (mean, stddev) = crate::stats::mean_std(&diffs);
        rows.push(EvalRow {
            rank,
            model_a: model_a.to_string(),
            model_b: model_b.to_string(),
            mean_improvement: mean,
            stddev,
            redrawn,
        });
    }
    Ok(EvalReport {
        n_bootstrap,
        seed,
        rows,
    })
}
