//! Maximum-likelihood propensity estimation from pairs that were shown at
//! several ranks and clicked exactly once.
//!
//! With click probabilities small, conditioning each pair on having received
//! a click eliminates its relevance, leaving
//!
//! ```text
//! L(p) = sum_j [ ln p(clicked rank of j) - ln sum_k p(rank k of j) ]
//! ```
//!
//! which is invariant under a global rescaling of `p`. In log-space
//! (`theta = ln p`) each term is a linear function minus a log-sum-exp, so
//! the objective is concave. We pin the lowest parametrized rank to
//! `theta = 0` and maximize over the rest.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::domain::{EstimationReport, KnotSpec, Method, PairGroup, PropensityCurve, DEFAULT_RANK_MAX};
use crate::error::{Error, Result};
use crate::interp::LogLogMap;
use crate::optim::{maximize, ConcaveObjective, NewtonConfig};

/// Pairs per partial sum. Fixed so that sums do not depend on thread count.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum Parametrization {
    /// One free propensity per observed rank.
    Direct,
    /// Free propensities at knot ranks, power law in between.
    Interpolated(KnotSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub parametrization: Parametrization,
    pub rank_max: u32,
    pub max_iterations: usize,
    /// Bound on the max-norm of the log-space gradient of the free parameters.
    pub gradient_tolerance: f64,
    /// Direct mode only: ranks seen fewer times than this get no parameter of
    /// their own and are interpolated from their neighbours.
    pub min_rank_observations: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            parametrization: Parametrization::Interpolated(KnotSpec::default()),
            rank_max: DEFAULT_RANK_MAX,
            max_iterations: 1000,
            gradient_tolerance: 1e-8,
            min_rank_observations: 1,
        }
    }
}

impl MleConfig {
    pub fn direct() -> Self {
        MleConfig {
            parametrization: Parametrization::Direct,
            ..Default::default()
        }
    }

    pub fn interpolated(knots: KnotSpec) -> Self {
        MleConfig {
            rank_max: knots.rank_max(),
            parametrization: Parametrization::Interpolated(knots),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.gradient_tolerance.is_nan() || self.gradient_tolerance <= 0.0 {
            return Err(Error::Config("gradient_tolerance must be positive".into()));
        }
        if let Parametrization::Interpolated(knots) = &self.parametrization {
            if knots.rank_max() != self.rank_max {
                return Err(Error::Config(format!(
                    "last knot {} differs from rank_max {}",
                    knots.rank_max(),
                    self.rank_max
                )));
            }
        }
        Ok(())
    }
}

/// Pairs flattened into contiguous rank arrays.
#[derive(Debug, Clone)]
struct Compiled {
    ranks: Vec<u32>,
    /// `offsets[j]..offsets[j + 1]` indexes the appearances of pair `j`.
    offsets: Vec<usize>,
    /// Position of the clicked appearance within each pair.
    clicked: Vec<usize>,
}

impl Compiled {
    fn new(pairs: &[PairGroup], rank_max: u32) -> Result<Self> {
        let mut ranks = Vec::with_capacity(pairs.len() * 2);
        let mut offsets = Vec::with_capacity(pairs.len() + 1);
        let mut clicked = Vec::with_capacity(pairs.len());
        offsets.push(0);
        for (j, pair) in pairs.iter().enumerate() {
            let mut click_at = None;
            for (k, a) in pair.appearances.iter().enumerate() {
                if a.rank < 1 || a.rank > rank_max {
                    return Err(Error::Domain(format!(
                        "pair {j} ({}, {}): rank {} outside 1..={rank_max}",
                        pair.query_id, pair.doc_id, a.rank
                    )));
                }
                if a.clicked {
                    if click_at.is_some() {
                        return Err(Error::Contract(format!(
                            "pair {j} ({}, {}) has more than one click",
                            pair.query_id, pair.doc_id
                        )));
                    }
                    click_at = Some(k);
                }
                ranks.push(a.rank);
            }
            let Some(click_at) = click_at else {
                return Err(Error::Contract(format!(
                    "pair {j} ({}, {}) has no click",
                    pair.query_id, pair.doc_id
                )));
            };
            if pair.distinct_ranks().len() < 2 {
                return Err(Error::Contract(format!(
                    "pair {j} ({}, {}) appeared at a single rank",
                    pair.query_id, pair.doc_id
                )));
            }
            clicked.push(click_at);
            offsets.push(ranks.len());
        }
        Ok(Compiled { ranks, offsets, clicked })
    }

    fn len(&self) -> usize {
        self.clicked.len()
    }

    fn pair(&self, j: usize) -> (&[u32], usize) {
        (&self.ranks[self.offsets[j]..self.offsets[j + 1]], self.clicked[j])
    }

    fn chunks(&self) -> Vec<std::ops::Range<usize>> {
        (0..self.len())
            .step_by(CHUNK)
            .map(|s| s..(s + CHUNK).min(self.len()))
            .collect()
    }

    /// Objective value given log-propensity per rank.
    fn value(&self, rank_logs: &[f64]) -> f64 {
        let partial: Vec<f64> = self
            .chunks()
            .into_par_iter()
            .map(|range| range.map(|j| self.term(j, rank_logs)).sum::<f64>())
            .collect();
        partial.iter().sum()
    }

    fn term(&self, j: usize, rank_logs: &[f64]) -> f64 {
        let (ranks, click) = self.pair(j);
        let logs = ranks.iter().map(|&r| rank_logs[r as usize - 1]);
        logs.clone().nth(click).unwrap() - log_sum_exp(logs)
    }

    /// Value and gradient over ranks.
    fn value_grad(&self, rank_logs: &[f64]) -> (f64, Vec<f64>) {
        let n = rank_logs.len();
        let partial: Vec<(f64, Vec<f64>)> = self
            .chunks()
            .into_par_iter()
            .map(|range| {
                let mut grad = vec![0.0; n];
                let mut value = 0.0;
                let mut q = Vec::new();
                for j in range {
                    value += self.softmax(j, rank_logs, &mut q);
                    let (ranks, click) = self.pair(j);
                    for (k, &r) in ranks.iter().enumerate() {
                        grad[r as usize - 1] += f64::from(u8::from(k == click)) - q[k];
                    }
                }
                (value, grad)
            })
            .collect();
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        for (v, g) in partial {
            value += v;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        (value, grad)
    }

    /// Fills `q` with the appearance weights `p_k / sum p` of pair `j` and
    /// returns the pair's log-likelihood term.
    fn softmax(&self, j: usize, rank_logs: &[f64], q: &mut Vec<f64>) -> f64 {
        let (ranks, click) = self.pair(j);
        q.clear();
        q.extend(ranks.iter().map(|&r| rank_logs[r as usize - 1]));
        let lse = log_sum_exp(q.iter().copied());
        let term = q[click] - lse;
        q.iter_mut().for_each(|v| *v = (*v - lse).exp());
        term
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn positive_logs(values: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(Error::Domain(format!("propensity at rank {} must be positive, got {v}", i + 1)))
            }
        })
        .collect()
}

/// Conditional log-likelihood of `pairs` under `curve`.
pub fn log_likelihood(curve: &PropensityCurve, pairs: &[PairGroup]) -> Result<f64> {
    log_likelihood_values(curve.values(), pairs)
}

/// [`log_likelihood`] for an arbitrary positive (not necessarily normalized)
/// vector of propensities indexed by rank - 1.
pub fn log_likelihood_values(values: &[f64], pairs: &[PairGroup]) -> Result<f64> {
    let logs = positive_logs(values)?;
    let compiled = Compiled::new(pairs, values.len() as u32)?;
    Ok(compiled.value(&logs))
}

/// Gradient of the log-likelihood with respect to `ln p_r` for every rank.
pub fn log_likelihood_gradient(curve: &PropensityCurve, pairs: &[PairGroup]) -> Result<Vec<f64>> {
    log_likelihood_gradient_values(curve.values(), pairs)
}

pub fn log_likelihood_gradient_values(values: &[f64], pairs: &[PairGroup]) -> Result<Vec<f64>> {
    let logs = positive_logs(values)?;
    let compiled = Compiled::new(pairs, values.len() as u32)?;
    Ok(compiled.value_grad(&logs).1)
}

/// Log-likelihood of the power-law curve with log-propensities `knot_logs`
/// at the knots.
pub fn knot_log_likelihood(knots: &KnotSpec, knot_logs: &[f64], pairs: &[PairGroup]) -> Result<f64> {
    let map = knot_map(knots, knot_logs)?;
    let compiled = Compiled::new(pairs, knots.rank_max())?;
    Ok(compiled.value(&map.expand(knot_logs)))
}

/// Gradient of [`knot_log_likelihood`] with respect to the knot log-values,
/// obtained by the chain rule through the log-log interpolation.
pub fn knot_log_likelihood_gradient(knots: &KnotSpec, knot_logs: &[f64], pairs: &[PairGroup]) -> Result<Vec<f64>> {
    let map = knot_map(knots, knot_logs)?;
    let compiled = Compiled::new(pairs, knots.rank_max())?;
    let (_, grad) = compiled.value_grad(&map.expand(knot_logs));
    Ok(map.pull_back(&grad))
}

fn knot_map(knots: &KnotSpec, knot_logs: &[f64]) -> Result<LogLogMap> {
    if knot_logs.len() != knots.knots().len() {
        return Err(Error::Domain(format!(
            "expected {} knot values, got {}",
            knots.knots().len(),
            knot_logs.len()
        )));
    }
    LogLogMap::new(knots.knots(), knots.rank_max())
}

/// The objective restricted to free anchors, the first anchor pinned at 0.
struct AnchoredObjective<'a> {
    data: &'a Compiled,
    map: LogLogMap,
}

impl AnchoredObjective<'_> {
    fn anchor_logs(&self, x: &[f64]) -> Vec<f64> {
        std::iter::once(0.0).chain(x.iter().copied()).collect()
    }
}

impl ConcaveObjective for AnchoredObjective<'_> {
    fn dim(&self) -> usize {
        self.map.anchors().len() - 1
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.data.value(&self.map.expand(&self.anchor_logs(x)))
    }

    fn value_grad_curvature(&self, x: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let rank_logs = self.map.expand(&self.anchor_logs(x));
        let n = self.map.anchors().len();
        let data = self.data;
        let map = &self.map;

        let partial: Vec<(f64, Vec<f64>, DMatrix<f64>)> = data
            .chunks()
            .into_par_iter()
            .map(|range| {
                let mut value = 0.0;
                let mut grad = vec![0.0; n];
                let mut curv = DMatrix::<f64>::zeros(n, n);
                let mut q = Vec::new();
                for j in range {
                    value += data.softmax(j, &rank_logs, &mut q);
                    let (ranks, click) = data.pair(j);
                    for (k, &rk) in ranks.iter().enumerate() {
                        let gk = f64::from(u8::from(k == click)) - q[k];
                        let row_k = map.row(rk).entries();
                        for &(a, wa) in row_k {
                            grad[a] += wa * gk;
                        }
                        // negated Hessian in rank space: diag(q) - q q^T
                        for (l, &rl) in ranks.iter().enumerate() {
                            let c = if k == l { q[k] - q[k] * q[l] } else { -q[k] * q[l] };
                            for &(a, wa) in row_k {
                                for &(b, wb) in map.row(rl).entries() {
                                    curv[(a, b)] += wa * wb * c;
                                }
                            }
                        }
                    }
                }
                (value, grad, curv)
            })
            .collect();

        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        let mut curv = DMatrix::<f64>::zeros(n, n);
        for (v, g, c) in partial {
            value += v;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            curv += c;
        }
        let free_curv = curv.view((1, 1), (n - 1, n - 1)).into_owned();
        (value, grad[1..].to_vec(), free_curv)
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Fails with [`Error::Disconnected`] unless every anchor is linked to every
/// other through pairs.
fn check_connected(data: &Compiled, map: &LogLogMap) -> Result<()> {
    let n = map.anchors().len();
    let mut uf = UnionFind::new(n);
    for j in 0..data.len() {
        let (ranks, _) = data.pair(j);
        let mut first = None;
        for &r in ranks {
            for &(a, _) in map.row(r).entries() {
                match first {
                    None => first = Some(a),
                    Some(f) => uf.union(f, a),
                }
            }
        }
    }
    let mut components: Vec<Vec<u32>> = Vec::new();
    let mut root_of = std::collections::BTreeMap::new();
    for i in 0..n {
        let root = uf.find(i);
        let slot = *root_of.entry(root).or_insert_with(|| {
            components.push(Vec::new());
            components.len() - 1
        });
        components[slot].push(map.anchors()[i]);
    }
    if components.len() > 1 {
        return Err(Error::Disconnected { components });
    }
    Ok(())
}

/// Anchor ranks that carry a free parameter.
fn select_anchors(data: &Compiled, cfg: &MleConfig) -> Result<Vec<u32>> {
    let mut counts = vec![0usize; cfg.rank_max as usize];
    for &r in &data.ranks {
        counts[r as usize - 1] += 1;
    }
    let anchors: Vec<u32> = match &cfg.parametrization {
        Parametrization::Direct => (1..=cfg.rank_max)
            .filter(|&r| counts[r as usize - 1] >= cfg.min_rank_observations.max(1))
            .collect(),
        Parametrization::Interpolated(knots) => {
            let full = LogLogMap::new(knots.knots(), cfg.rank_max)?;
            let mut touched = vec![false; knots.knots().len()];
            for r in 1..=cfg.rank_max {
                if counts[r as usize - 1] > 0 {
                    for &(a, w) in full.row(r).entries() {
                        if w > 0.0 {
                            touched[a] = true;
                        }
                    }
                }
            }
            knots
                .knots()
                .iter()
                .zip(touched)
                .filter_map(|(&k, t)| t.then_some(k))
                .collect()
        }
    };
    if anchors.len() < 2 {
        return Err(Error::NoData(format!(
            "need at least two parametrized ranks, found {}",
            anchors.len()
        )));
    }
    Ok(anchors)
}

/// Fits propensities by maximizing the conditional log-likelihood.
///
/// Ranks or knots without data get their value by log-log interpolation
/// from the nearest parametrized ranks (flat beyond the outermost ones);
/// their number is reported in `n_interpolated_ranks`. Non-convergence is
/// not an error: the report carries `converged = false`.
pub fn fit(pairs: &[PairGroup], cfg: &MleConfig) -> Result<EstimationReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::NoData("no pairs to estimate from".into()));
    }
    let data = Compiled::new(pairs, cfg.rank_max)?;
    let anchors = select_anchors(&data, cfg)?;
    let map = LogLogMap::new(&anchors, cfg.rank_max)?;
    check_connected(&data, &map)?;

    let objective = AnchoredObjective { data: &data, map };
    let newton = NewtonConfig {
        max_iterations: cfg.max_iterations,
        gradient_tolerance: cfg.gradient_tolerance,
        ..Default::default()
    };
    let outcome = maximize(&objective, vec![0.0; objective.dim()], &newton);

    let rank_logs = objective.map.expand(&objective.anchor_logs(&outcome.x));
    let values: Vec<f64> = rank_logs.iter().map(|t| t.exp()).collect();
    let method = match cfg.parametrization {
        Parametrization::Direct => Method::Direct,
        Parametrization::Interpolated(_) => Method::Interpolated,
    };
    Ok(EstimationReport {
        curve: PropensityCurve::normalized(&values, method)?,
        final_log_likelihood: outcome.value,
        iterations: outcome.iterations,
        converged: outcome.converged,
        n_pairs_used: pairs.len(),
        n_interpolated_ranks: cfg.rank_max as usize - anchors.len(),
        trace: outcome.trace,
    })
}
