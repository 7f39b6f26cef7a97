//! Synthetic click logs with a known propensity curve.
//!
//! Each synthetic query-document pair gets a mean rank drawn uniformly, a
//! latent relevance drawn from a noisy power law in the mean rank, and two
//! distinct ranks drawn around the mean. Clicks follow the position-based
//! model `P(click) = relevance * propensity(rank)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::domain::{Appearance, Method, PairGroup, PropensityCurve, DEFAULT_RANK_MAX};
use crate::error::{Error, Result};
use crate::ingest::{is_selected, SelectionMode};

/// Number of attempts at drawing a second rank distinct from the first.
pub const MAX_RANK_REDRAWS: usize = 100;

const BATCH: u64 = 8192;

/// Distribution of the latent relevance given the mean rank.
///
/// `z = clamp(scale * mean^(-exponent) * exp(sigma * g) / propensity(mean), 0, 1)`
/// with `g` standard normal, so the click-through rate at the mean rank
/// follows a power law with log-normal noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceModel {
    pub base_ctr_scale: f64,
    pub base_ctr_exponent: f64,
    pub noise_sigma: f64,
}

impl Default for RelevanceModel {
    fn default() -> Self {
        RelevanceModel {
            base_ctr_scale: 0.3,
            base_ctr_exponent: 0.4,
            noise_sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub rank_max: u32,
    pub n_pairs_target: usize,
    /// Standard deviation of the rank draws is `rank_mean / rank_spread_divisor`.
    pub rank_spread_divisor: f64,
    pub relevance: RelevanceModel,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rank_max: DEFAULT_RANK_MAX,
            n_pairs_target: 40_000,
            rank_spread_divisor: 5.0,
            relevance: RelevanceModel::default(),
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank_max < 2 {
            return Err(Error::Config("rank_max must be at least 2 to draw two distinct ranks".into()));
        }
        if !(self.rank_spread_divisor > 0.0 && self.rank_spread_divisor.is_finite()) {
            return Err(Error::Config("rank_spread_divisor must be positive".into()));
        }
        let rel = &self.relevance;
        if !(rel.base_ctr_scale > 0.0 && rel.base_ctr_scale.is_finite()) {
            return Err(Error::Config("base_ctr_scale must be positive".into()));
        }
        if !rel.base_ctr_exponent.is_finite() {
            return Err(Error::Config("base_ctr_exponent must be finite".into()));
        }
        if !(rel.noise_sigma >= 0.0 && rel.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground-truth propensity `min(1 / ln(rank), 1)`; ranks 1 and 2 get 1.
pub fn true_propensity(rank: u32) -> Result<f64> {
    if rank < 1 {
        return Err(Error::Domain("rank must be >= 1".into()));
    }
    Ok(true_propensity_unchecked(rank))
}

fn true_propensity_unchecked(rank: u32) -> f64 {
    // ln(1) = 0 gives +inf, clamped to 1 below.
    (1.0 / f64::from(rank).ln()).min(1.0)
}

/// The ground-truth curve over `1..=rank_max`.
pub fn true_curve(rank_max: u32) -> PropensityCurve {
    let values = (1..=rank_max).map(true_propensity_unchecked).collect();
    PropensityCurve::new(values, Method::TrueSim).expect("true propensities are normalized")
}

/// Everything drawn for one synthetic pair, before any selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    pub index: u64,
    pub rank_mean: u32,
    pub relevance: f64,
    /// `None` when no distinct second rank was found.
    pub appearances: Option<[Appearance; 2]>,
}

impl SimDraw {
    pub fn into_group(self) -> Option<PairGroup> {
        let appearances = self.appearances?;
        Some(PairGroup::new(
            format!("sq{}", self.index),
            format!("sd{}", self.index),
            appearances.to_vec(),
        ))
    }
}

/// Random stream of pair `index`: a pure function of `(seed, index)`.
fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_relevance(cfg: &SimConfig, rank_mean: u32, rng: &mut ChaCha8Rng) -> f64 {
    let rel = &cfg.relevance;
    let g: f64 = StandardNormal.sample(rng);
    let mean = f64::from(rank_mean);
    let z = rel.base_ctr_scale * mean.powf(-rel.base_ctr_exponent) * (rel.noise_sigma * g).exp()
        / true_propensity_unchecked(rank_mean);
    z.clamp(0.0, 1.0)
}

fn draw_rank(cfg: &SimConfig, dist: &Normal<f64>, rng: &mut ChaCha8Rng) -> u32 {
    let x: f64 = dist.sample(rng);
    x.round().clamp(1.0, f64::from(cfg.rank_max)) as u32
}

fn click(relevance: f64, rank: u32, rng: &mut ChaCha8Rng) -> bool {
    rng.random::<f64>() < relevance * true_propensity_unchecked(rank)
}

/// Draws pair `index` of the simulation defined by `cfg`.
pub fn draw_pair(cfg: &SimConfig, index: u64) -> SimDraw {
    let mut rng = stream(cfg.seed, index);
    let rank_mean = rng.random_range(1..=cfg.rank_max);
    let relevance = draw_relevance(cfg, rank_mean, &mut rng);
    let mean = f64::from(rank_mean);
    let dist = Normal::new(mean, mean / cfg.rank_spread_divisor).expect("finite positive spread");

    let first = draw_rank(cfg, &dist, &mut rng);
    let second = (0..MAX_RANK_REDRAWS)
        .map(|_| draw_rank(cfg, &dist, &mut rng))
        .find(|&r| r != first);

    let appearances = second.map(|second| {
        [
            Appearance::new(first, click(relevance, first, &mut rng)),
            Appearance::new(second, click(relevance, second, &mut rng)),
        ]
    });
    SimDraw {
        index,
        rank_mean,
        relevance,
        appearances,
    }
}

/// Output of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub groups: Vec<PairGroup>,
    pub truth: PropensityCurve,
    /// Pairs drawn, including those that were not retained.
    pub attempted: u64,
}

/// Draws pairs until `n_pairs_target` of them appear at two distinct ranks
/// with exactly one click.
pub fn simulate_pairs(cfg: &SimConfig) -> Result<Simulation> {
    simulate_with(cfg, false)
}

/// The unselected log behind [`simulate_pairs`]: every pair drawn by the same
/// run that got two distinct ranks, clicked or not. This is what the EM and
/// ratio estimators consume.
pub fn simulate_raw_groups(cfg: &SimConfig) -> Result<Simulation> {
    simulate_with(cfg, true)
}

fn simulate_with(cfg: &SimConfig, keep_all: bool) -> Result<Simulation> {
    cfg.validate()?;
    let truth = true_curve(cfg.rank_max);
    let target = cfg.n_pairs_target;
    let mut groups = Vec::with_capacity(target);
    let mut selected = 0usize;
    let mut next = 0u64;
    while selected < target {
        let batch: Vec<Option<PairGroup>> = (next..next + BATCH)
            .into_par_iter()
            .map(|i| draw_pair(cfg, i).into_group())
            .collect();
        for (offset, g) in batch.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let hit = is_selected(&g, SelectionMode::ExactlyTwoRanksOneClick);
            if hit || keep_all {
                groups.push(g);
            }
            if hit {
                selected += 1;
                if selected == target {
                    return Ok(Simulation {
                        groups,
                        truth,
                        attempted: next + offset as u64 + 1,
                    });
                }
            }
        }
        next += BATCH;
    }
    Ok(Simulation {
        groups,
        truth,
        attempted: next,
    })
}

/// Pairs shown exactly once at each of two fixed ranks, with no selection
/// applied. The relevance is drawn as in [`draw_pair`] with the mean rank
/// uniform between the two ranks.
pub fn simulate_rank_pair(cfg: &SimConfig, rank_a: u32, rank_b: u32, n_pairs: usize) -> Result<Vec<PairGroup>> {
    cfg.validate()?;
    if rank_a == rank_b || rank_a == 0 || rank_b == 0 {
        return Err(Error::Config("need two distinct ranks >= 1".into()));
    }
    let (lo, hi) = (rank_a.min(rank_b), rank_a.max(rank_b));
    Ok((0..n_pairs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, i);
            let rank_mean = rng.random_range(lo..=hi);
            let z = draw_relevance(cfg, rank_mean, &mut rng);
            let appearances = vec![
                Appearance::new(rank_a, click(z, rank_a, &mut rng)),
                Appearance::new(rank_b, click(z, rank_b, &mut rng)),
            ];
            PairGroup::new(format!("sq{i}"), format!("sd{i}"), appearances)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn true_propensity_values() {
        assert_eq!(true_propensity(1).unwrap(), 1.0);
        assert_eq!(true_propensity(2).unwrap(), 1.0);
        assert_relative_eq!(true_propensity(3).unwrap(), 0.910239, epsilon = 1e-6);
        assert_relative_eq!(true_propensity(100).unwrap(), 0.217147, epsilon = 1e-6);
        assert!(true_propensity(0).is_err());
    }

    #[test]
    fn zero_target_gives_only_truth() {
        let cfg = SimConfig {
            n_pairs_target: 0,
            ..Default::default()
        };
        let sim = simulate_pairs(&cfg).unwrap();
        assert!(sim.groups.is_empty());
        assert_eq!(sim.truth.rank_max(), 500);
        assert_eq!(sim.truth.method(), Method::TrueSim);
    }

    #[test]
    fn retained_groups_satisfy_selection() {
        let cfg = SimConfig {
            n_pairs_target: 2000,
            seed: 7,
            ..Default::default()
        };
        let sim = simulate_pairs(&cfg).unwrap();
        assert_eq!(sim.groups.len(), 2000);
        for g in &sim.groups {
            assert_eq!(g.appearances.len(), 2);
            assert_eq!(g.distinct_ranks().len(), 2);
            assert_eq!(g.n_clicks(), 1);
            assert!(g.max_rank() <= 500);
        }
        assert!(sim.attempted > 2000);
    }

    #[test]
    fn raw_log_selects_down_to_the_pairs() {
        let cfg = SimConfig {
            n_pairs_target: 500,
            seed: 3,
            ..Default::default()
        };
        let pairs = simulate_pairs(&cfg).unwrap();
        let raw = simulate_raw_groups(&cfg).unwrap();
        assert_eq!(raw.attempted, pairs.attempted);
        assert!(raw.groups.len() > pairs.groups.len());
        let selected: Vec<_> = raw
            .groups
            .into_iter()
            .filter(|g| is_selected(g, SelectionMode::ExactlyTwoRanksOneClick))
            .collect();
        assert_eq!(selected, pairs.groups);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let cfg = SimConfig {
            n_pairs_target: 3000,
            seed: 11,
            ..Default::default()
        };
        let a = simulate_pairs(&cfg).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| simulate_pairs(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SimConfig {
            rank_spread_divisor: 0.0,
            ..Default::default()
        };
        assert!(simulate_pairs(&cfg).is_err());
    }

    #[test]
    fn rank_pair_simulation_shape() {
        let groups = simulate_rank_pair(&SimConfig::default(), 1, 10, 50).unwrap();
        assert_eq!(groups.len(), 50);
        assert!(groups
            .iter()
            .all(|g| g.distinct_ranks().into_iter().collect::<Vec<_>>() == vec![1, 10]));
    }

    // Click-through rate over pre-selection impressions matches the mean of
    // relevance * propensity over the same impressions.
    #[test]
    fn empirical_ctr_matches_model() {
        let cfg = SimConfig {
            seed: 2024,
            ..Default::default()
        };
        let ranks = [1u32, 10, 100];
        let mut clicks = [0.0f64; 3];
        let mut expected = [0.0f64; 3];
        let mut impressions = [0usize; 3];
        let draws: Vec<SimDraw> = (0..1_000_000u64).into_par_iter().map(|i| draw_pair(&cfg, i)).collect();
        for d in draws {
            let Some(apps) = d.appearances else { continue };
            for a in apps {
                if let Some(k) = ranks.iter().position(|&r| r == a.rank) {
                    impressions[k] += 1;
                    clicks[k] += f64::from(u8::from(a.clicked));
                    expected[k] += d.relevance * true_propensity_unchecked(a.rank);
                }
            }
        }
        for k in 0..3 {
            let n = impressions[k] as f64;
            assert!(n > 1000.0, "too few impressions at rank {}", ranks[k]);
            let ctr = clicks[k] / n;
            let want = expected[k] / n;
            assert!(
                (ctr - want).abs() <= 0.05 * want,
                "rank {}: ctr {ctr} vs model {want}",
                ranks[k]
            );
        }
    }
}
