//! Independent reference implementations used as test oracles.
//!
//! Everything here is written from the model definitions directly (brute-force
//! grids, finite differences, closed-form click probabilities) and shares no
//! code with the estimators under test beyond the public data types.

#![allow(dead_code)]

use propensity_core::mle::log_likelihood_values;
use propensity_core::PairGroup;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random one-click groups over ranks `1..=n_ranks`, each shown at 2 or 3
/// appearances spanning at least two distinct ranks.
pub fn random_instance(rng: &mut ChaCha8Rng, n_ranks: u32, n_pairs: usize) -> Vec<PairGroup> {
    (0..n_pairs)
        .map(|j| {
            let a = rng.random_range(1..=n_ranks);
            let mut b = rng.random_range(1..=n_ranks);
            while b == a {
                b = rng.random_range(1..=n_ranks);
            }
            let mut ranks = vec![a, b];
            if rng.random_bool(0.3) {
                ranks.push(rng.random_range(1..=n_ranks));
            }
            let clicked = rng.random_range(0..ranks.len());
            let apps: Vec<(u32, bool)> = ranks.iter().enumerate().map(|(k, &r)| (r, k == clicked)).collect();
            PairGroup::from_pairs("q", &format!("d{j}"), &apps)
        })
        .collect()
}

/// The simplified log-likelihood written out term by term.
pub fn naive_log_likelihood(theta: &[f64], pairs: &[PairGroup]) -> f64 {
    pairs
        .iter()
        .map(|g| {
            let clicked = g.appearances.iter().find(|a| a.clicked).unwrap();
            let denom: f64 = g.appearances.iter().map(|a| theta[a.rank as usize - 1].exp()).sum();
            theta[clicked.rank as usize - 1] - denom.ln()
        })
        .sum()
}

/// Central finite-difference gradient of the library log-likelihood in
/// `theta = ln p`.
pub fn fd_gradient(theta: &[f64], pairs: &[PairGroup], h: f64) -> Vec<f64> {
    let eval = |t: &[f64]| {
        let values: Vec<f64> = t.iter().map(|x| x.exp()).collect();
        log_likelihood_values(&values, pairs).unwrap()
    };
    (0..theta.len())
        .map(|i| {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[i] += h;
            down[i] -= h;
            (eval(&up) - eval(&down)) / (2.0 * h)
        })
        .collect()
}

fn grid_points(center: f64, half_width: f64, step: f64) -> Vec<f64> {
    let n = (half_width / step).round() as i64;
    (-n..=n).map(|k| center + k as f64 * step).collect()
}

fn best_on_grid(f: &impl Fn(&[f64]) -> f64, axes: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let mut best = (vec![0.0; axes.len()], f64::NEG_INFINITY);
    let mut idx = vec![0usize; axes.len()];
    loop {
        let x: Vec<f64> = idx.iter().zip(axes).map(|(&i, a)| a[i]).collect();
        let v = f(&x);
        if v > best.1 {
            best = (x, v);
        }
        let mut d = 0;
        loop {
            if d == axes.len() {
                return best;
            }
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Maximizes a concave `f` over a box `[-bound, bound]^dim` by exhaustive grid
/// search: a coarse pass with step 0.05, then a pass with step `fine` around
/// the coarse optimum.
pub fn grid_argmax(f: impl Fn(&[f64]) -> f64, dim: usize, bound: f64, fine: f64) -> Vec<f64> {
    let coarse: Vec<Vec<f64>> = (0..dim).map(|_| grid_points(0.0, bound, 0.05)).collect();
    let (x0, _) = best_on_grid(&f, &coarse);
    let refined: Vec<Vec<f64>> = x0.iter().map(|&c| grid_points(c, 0.06, fine)).collect();
    best_on_grid(&f, &refined).0
}

/// Maximizes a unimodal `f` on `[lo, hi]` by golden-section search.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iterations: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iterations {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        }
    }
    // The endpoints are candidates too: the optimum may sit on the boundary.
    [(lo, f(lo)), (hi, f(hi)), (a, fa), (b, fb)]
        .into_iter()
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
}

/// Log of the exact probability of a group's clicks given that it received at
/// least one click, under the position-based model with absolute propensities
/// `p` (indexed by rank - 1) and relevance `z`.
pub fn exact_conditional_term(group: &PairGroup, p: &[f64], z: f64) -> f64 {
    let mut num = 0.0;
    let mut none = 1.0;
    for a in &group.appearances {
        let pz = p[a.rank as usize - 1] * z;
        num += if a.clicked { pz.ln() } else { (1.0 - pz).ln() };
        none *= 1.0 - pz;
    }
    num - (1.0 - none).ln()
}

/// The exact conditional log-likelihood with each group's relevance
/// maximized out over `[z_floor, cap / max p]`, so that every click
/// probability stays at or below `cap`.
pub fn profiled_exact_log_likelihood(p: &[f64], pairs: &[PairGroup], cap: f64, z_floor: f64) -> f64 {
    pairs
        .iter()
        .map(|g| {
            let p_max = g.appearances.iter().map(|a| p[a.rank as usize - 1]).fold(0.0, f64::max);
            let hi = cap / p_max;
            golden_section_max(|z| exact_conditional_term(g, p, z), z_floor, hi, 80).1
        })
        .sum()
}

/// Full position-based-model log-likelihood of `(rank, clicks, impressions)`
/// tallies with one shared relevance.
pub fn pbm_tally_log_likelihood(tallies: &[(usize, f64, f64)], p: &[f64], z: f64) -> f64 {
    tallies
        .iter()
        .map(|&(r, clicks, imps)| {
            let q = p[r] * z;
            clicks * q.ln() + (imps - clicks) * (1.0 - q).ln()
        })
        .sum()
}

/// Mean absolute relative error over the first `n` ranks.
pub fn mare(estimate: &[f64], truth: &[f64], n: usize) -> f64 {
    estimate[..n]
        .iter()
        .zip(&truth[..n])
        .map(|(e, t)| ((e - t) / t).abs())
        .sum::<f64>()
        / n as f64
}

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Docs shown once at rank 1 and once at rank 2 whose clicks give empirical
/// click-through rates of `ctr1` and `ctr2`, with clicks at the two ranks
/// independent (the joint table is the product of the margins).
pub fn homogeneous_two_rank_instance(n_docs: usize, ctr1: f64, ctr2: f64) -> Vec<PairGroup> {
    let both = (n_docs as f64 * ctr1 * ctr2).round() as usize;
    let only1 = (n_docs as f64 * ctr1).round() as usize - both;
    let only2 = (n_docs as f64 * ctr2).round() as usize - both;
    (0..n_docs)
        .map(|j| {
            let (c1, c2) = if j < both {
                (true, true)
            } else if j < both + only1 {
                (true, false)
            } else if j < both + only1 + only2 {
                (false, true)
            } else {
                (false, false)
            };
            PairGroup::from_pairs("q", &format!("d{j}"), &[(1, c1), (2, c2)])
        })
        .collect()
}
