//! Propensity ratios from clicks-per-impression at two fixed ranks, for data
//! where many pairs were shown at both ranks.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::PairGroup;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub rank_i: u32,
    pub rank_j: u32,
    /// Estimate of `p_i / p_j`.
    pub ratio: f64,
    pub n_pairs: usize,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    clicks: u32,
    impressions: u32,
}

impl Tally {
    fn rate(self) -> f64 {
        f64::from(self.clicks) / f64::from(self.impressions)
    }
}

fn tallies(group: &PairGroup) -> BTreeMap<u32, Tally> {
    let mut out: BTreeMap<u32, Tally> = BTreeMap::new();
    for a in &group.appearances {
        let t = out.entry(a.rank).or_default();
        t.impressions += 1;
        t.clicks += u32::from(a.clicked);
    }
    out
}

/// Estimates `p_i / p_j` as the ratio of summed clicks-per-impression at the
/// two ranks, over groups that appeared at both.
pub fn ratio_estimate(groups: &[PairGroup], rank_i: u32, rank_j: u32) -> Result<RatioEstimate> {
    if rank_i == rank_j {
        return Err(Error::Config(format!("ranks must differ, got {rank_i} twice")));
    }
    let (mut sum_i, mut sum_j, mut n_pairs) = (0.0, 0.0, 0usize);
    for g in groups {
        let t = tallies(g);
        if let (Some(ti), Some(tj)) = (t.get(&rank_i), t.get(&rank_j)) {
            sum_i += ti.rate();
            sum_j += tj.rate();
            n_pairs += 1;
        }
    }
    finish(rank_i, rank_j, sum_i, sum_j, n_pairs)
}

fn finish(rank_i: u32, rank_j: u32, sum_i: f64, sum_j: f64, n_pairs: usize) -> Result<RatioEstimate> {
    if n_pairs == 0 {
        return Err(Error::NoData(format!("no pair appeared at both ranks {rank_i} and {rank_j}")));
    }
    if sum_j == 0.0 {
        return Err(Error::UndefinedRatio(format!(
            "no clicks at rank {rank_j} among {n_pairs} pairs"
        )));
    }
    Ok(RatioEstimate {
        rank_i,
        rank_j,
        ratio: sum_i / sum_j,
        n_pairs,
    })
}

/// Ratios for every rank pair `i < j` among `ranks` (or among all observed
/// ranks when `ranks` is `None`) for which the estimate is defined.
pub fn ratio_matrix(groups: &[PairGroup], ranks: Option<&[u32]>) -> Vec<RatioEstimate> {
    let wanted: Option<std::collections::BTreeSet<u32>> = ranks.map(|r| r.iter().copied().collect());
    // (i, j) -> (sum_i, sum_j, n)
    let mut acc: BTreeMap<(u32, u32), (f64, f64, usize)> = BTreeMap::new();
    for g in groups {
        let t: Vec<(u32, Tally)> = tallies(g)
            .into_iter()
            .filter(|(r, _)| wanted.as_ref().is_none_or(|w| w.contains(r)))
            .collect();
        for (a, &(ri, ti)) in t.iter().enumerate() {
            for &(rj, tj) in &t[a + 1..] {
                let e = acc.entry((ri, rj)).or_insert((0.0, 0.0, 0));
                e.0 += ti.rate();
                e.1 += tj.rate();
                e.2 += 1;
            }
        }
    }
    acc.into_iter()
        .filter_map(|((i, j), (si, sj, n))| finish(i, j, si, sj, n).ok())
        .collect()
}
