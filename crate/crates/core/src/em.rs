//! Position-based click model fitted by expectation-maximization, used as a
//! baseline for the likelihood estimator.
//!
//! Every impression is clicked iff it was observed (probability `p_rank`) and
//! found relevant (probability `z_pair`). Non-clicked impressions are split
//! between the three latent outcomes by their posterior; the M-step turns
//! expected counts into new `p` and `z`.

use rayon::prelude::*;

use crate::domain::{EstimationReport, Method, PairGroup, PropensityCurve, DEFAULT_RANK_MAX};
use crate::error::{Error, Result};
use crate::interp::fill_log_log;

const CHUNK: usize = 4096;
const FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when `|L_new - L_old| / |L_old|` falls below this.
    pub ll_tolerance: f64,
    /// Add-alpha smoothing: estimates are `(expected + alpha) / (n + 2 alpha)`.
    pub smoothing: f64,
    pub rank_max: u32,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 200,
            ll_tolerance: 1e-7,
            smoothing: 1.0,
            rank_max: DEFAULT_RANK_MAX,
        }
    }
}

/// How relevances are re-estimated in the M-step.
///
/// The default learns one free relevance per pair. A feature-based
/// regression can be plugged in by implementing this trait.
pub trait RelevanceUpdater: Sync {
    fn initial(&self, groups: &[PairGroup]) -> Vec<f64>;

    /// New relevance per group from the expected number of relevant
    /// impressions and the number of impressions of each group.
    fn update(&self, groups: &[PairGroup], expected_relevant: &[f64], smoothing: f64) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct PerPairRelevance {
    pub initial: f64,
}

impl Default for PerPairRelevance {
    fn default() -> Self {
        PerPairRelevance { initial: 0.5 }
    }
}

impl RelevanceUpdater for PerPairRelevance {
    fn initial(&self, groups: &[PairGroup]) -> Vec<f64> {
        vec![self.initial; groups.len()]
    }

    fn update(&self, groups: &[PairGroup], expected_relevant: &[f64], smoothing: f64) -> Vec<f64> {
        groups
            .iter()
            .zip(expected_relevant)
            .map(|(g, &e)| smoothed(e, g.appearances.len() as f64, smoothing))
            .collect()
    }
}

fn smoothed(expected: f64, n: f64, alpha: f64) -> f64 {
    ((expected + alpha) / (n + 2.0 * alpha)).clamp(FLOOR, 1.0)
}

/// Full-data log-likelihood of the click model.
pub fn pbm_log_likelihood(groups: &[PairGroup], propensity: &[f64], relevance: &[f64]) -> f64 {
    let partial: Vec<f64> = groups
        .par_chunks(CHUNK)
        .zip(relevance.par_chunks(CHUNK))
        .map(|(gs, zs)| {
            gs.iter()
                .zip(zs)
                .map(|(g, &z)| {
                    g.appearances
                        .iter()
                        .map(|a| {
                            let pz = propensity[a.rank as usize - 1] * z;
                            if a.clicked {
                                pz.ln()
                            } else {
                                (1.0 - pz).ln()
                            }
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

/// Fits the click model with per-pair relevances.
pub fn em_fit(groups: &[PairGroup], cfg: &EmConfig) -> Result<EstimationReport> {
    em_fit_with(groups, cfg, &PerPairRelevance::default())
}

pub fn em_fit_with<R: RelevanceUpdater>(groups: &[PairGroup], cfg: &EmConfig, relevance: &R) -> Result<EstimationReport> {
    if groups.is_empty() {
        return Err(Error::NoData("no groups to estimate from".into()));
    }
    if cfg.smoothing.is_nan() || cfg.smoothing < 0.0 {
        return Err(Error::Config("smoothing must be non-negative".into()));
    }
    if cfg.max_iterations < 1 {
        return Err(Error::Config("max_iterations must be at least 1".into()));
    }
    let n_ranks = cfg.rank_max as usize;
    let mut impressions = vec![0usize; n_ranks];
    for g in groups {
        for a in &g.appearances {
            if a.rank < 1 || a.rank > cfg.rank_max {
                return Err(Error::Domain(format!(
                    "({}, {}): rank {} outside 1..={}",
                    g.query_id, g.doc_id, a.rank, cfg.rank_max
                )));
            }
            impressions[a.rank as usize - 1] += 1;
        }
    }

    let mut p: Vec<f64> = impressions.iter().map(|&n| if n > 0 { 0.5 } else { 1.0 }).collect();
    let mut z = relevance.initial(groups);
    let mut ll = pbm_log_likelihood(groups, &p, &z);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let (observed, relevant) = e_step(groups, &p, &z, n_ranks);
        for r in 0..n_ranks {
            if impressions[r] > 0 {
                p[r] = smoothed(observed[r], impressions[r] as f64, cfg.smoothing);
            }
        }
        z = relevance.update(groups, &relevant, cfg.smoothing);
        iterations += 1;

        let next = pbm_log_likelihood(groups, &p, &z);
        trace.push(next);
        let change = (next - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        ll = next;
        if change < cfg.ll_tolerance {
            converged = true;
            break;
        }
    }

    let known: Vec<(u32, f64)> = (1..=cfg.rank_max)
        .filter(|&r| impressions[r as usize - 1] > 0)
        .map(|r| (r, p[r as usize - 1]))
        .collect();
    let values = fill_log_log(&known, cfg.rank_max)?;
    Ok(EstimationReport {
        curve: PropensityCurve::normalized(&values, Method::Em)?,
        final_log_likelihood: ll,
        iterations,
        converged,
        n_pairs_used: groups.len(),
        n_interpolated_ranks: n_ranks - known.len(),
        trace,
    })
}

/// Expected observed impressions per rank and expected relevant impressions
/// per group.
fn e_step(groups: &[PairGroup], p: &[f64], z: &[f64], n_ranks: usize) -> (Vec<f64>, Vec<f64>) {
    let partial: Vec<(Vec<f64>, Vec<f64>)> = groups
        .par_chunks(CHUNK)
        .zip(z.par_chunks(CHUNK))
        .map(|(gs, zs)| {
            let mut observed = vec![0.0; n_ranks];
            let mut relevant = Vec::with_capacity(gs.len());
            for (g, &zj) in gs.iter().zip(zs) {
                let mut rel = 0.0;
                for a in &g.appearances {
                    let pr = p[a.rank as usize - 1];
                    let (obs, r) = if a.clicked {
                        (1.0, 1.0)
                    } else {
                        let denom = (1.0 - pr * zj).max(f64::MIN_POSITIVE);
                        (pr * (1.0 - zj) / denom, (1.0 - pr) * zj / denom)
                    };
                    observed[a.rank as usize - 1] += obs;
                    rel += r;
                }
                relevant.push(rel);
            }
            (observed, relevant)
        })
        .collect();

    let mut observed = vec![0.0; n_ranks];
    let mut relevant = Vec::with_capacity(groups.len());
    for (o, r) in partial {
        observed.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        relevant.extend(r);
    }
    (observed, relevant)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_clicked_gives_flat_curve() {
        let groups = vec![
            PairGroup::from_pairs("q", "a", &[(1, true), (2, true), (3, true)]),
            PairGroup::from_pairs("q", "b", &[(1, true), (3, true)]),
        ];
        let cfg = EmConfig {
            rank_max: 3,
            smoothing: 0.0,
            ..Default::default()
        };
        let report = em_fit(&groups, &cfg).unwrap();
        assert_eq!(report.curve.values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(em_fit(&[], &EmConfig::default()), Err(Error::NoData(_))));
    }

    #[test]
    fn rank_out_of_range() {
        let groups = vec![PairGroup::from_pairs("q", "a", &[(1, true), (9, false)])];
        let cfg = EmConfig {
            rank_max: 5,
            ..Default::default()
        };
        assert!(matches!(em_fit(&groups, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn log_likelihood_is_monotone_without_smoothing() {
        let mut groups = Vec::new();
        for i in 0..60u32 {
            let a = (i % 7) + 1;
            let b = (i * 3 % 11) + 1;
            if a == b {
                continue;
            }
            groups.push(PairGroup::from_pairs(
                "q",
                &format!("d{i}"),
                &[(a, i % 3 == 0), (b, i % 5 == 0), (a, false)],
            ));
        }
        let cfg = EmConfig {
            rank_max: 12,
            smoothing: 0.0,
            ll_tolerance: 1e-12,
            ..Default::default()
        };
        let report = em_fit(&groups, &cfg).unwrap();
        assert!(report.trace.len() > 2);
        for w in report.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
    }
}
