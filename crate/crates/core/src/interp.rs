//! Piecewise power-law curves: log-propensity linear in log-rank between
//! anchor ranks, flat outside the outermost anchors.

use crate::error::{Error, Result};

/// Linear map from log-values at a set of anchor ranks to log-values at every
/// rank `1..=rank_max`.
///
/// Each rank depends on at most two anchors, so rows are stored sparsely.
#[derive(Debug, Clone)]
pub struct LogLogMap {
    anchors: Vec<u32>,
    rows: Vec<Row>,
}

/// Up to two `(anchor index, weight)` entries; weights sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    entries: [(usize, f64); 2],
    len: usize,
}

impl Row {
    fn single(idx: usize) -> Self {
        Row {
            entries: [(idx, 1.0), (0, 0.0)],
            len: 1,
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries[..self.len]
    }
}

impl LogLogMap {
    pub fn new(anchors: &[u32], rank_max: u32) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Config("at least one anchor rank is required".into()));
        }
        if anchors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("anchor ranks must be strictly increasing".into()));
        }
        if anchors[0] == 0 || *anchors.last().unwrap() > rank_max {
            return Err(Error::Config(format!("anchor ranks must lie in 1..={rank_max}")));
        }

        let mut rows = Vec::with_capacity(rank_max as usize);
        let mut seg = 0;
        for rank in 1..=rank_max {
            while seg + 1 < anchors.len() && anchors[seg + 1] <= rank {
                seg += 1;
            }
            let row = if rank <= anchors[0] {
                Row::single(0)
            } else if rank == anchors[seg] || seg + 1 == anchors.len() {
                Row::single(seg)
            } else {
                let lo = f64::from(anchors[seg]).ln();
                let hi = f64::from(anchors[seg + 1]).ln();
                let t = (f64::from(rank).ln() - lo) / (hi - lo);
                Row {
                    entries: [(seg, 1.0 - t), (seg + 1, t)],
                    len: 2,
                }
            };
            rows.push(row);
        }
        Ok(LogLogMap {
            anchors: anchors.to_vec(),
            rows,
        })
    }

    pub fn anchors(&self) -> &[u32] {
        &self.anchors
    }

    pub fn rank_max(&self) -> u32 {
        self.rows.len() as u32
    }

    /// Row of rank `rank` (1-based).
    pub fn row(&self, rank: u32) -> &Row {
        &self.rows[rank as usize - 1]
    }

    /// Log-values at every rank from log-values at the anchors.
    pub fn expand(&self, anchor_logs: &[f64]) -> Vec<f64> {
        assert_eq!(anchor_logs.len(), self.anchors.len());
        self.rows
            .iter()
            .map(|row| row.entries().iter().map(|&(i, w)| w * anchor_logs[i]).sum())
            .collect()
    }

    /// Transposed map: a gradient over all ranks pulled back onto the anchors.
    pub fn pull_back(&self, rank_grad: &[f64]) -> Vec<f64> {
        assert_eq!(rank_grad.len(), self.rows.len());
        let mut out = vec![0.0; self.anchors.len()];
        for (row, g) in self.rows.iter().zip(rank_grad) {
            for &(i, w) in row.entries() {
                out[i] += w * g;
            }
        }
        out
    }
}

/// Fills a full curve from values known at a subset of ranks, interpolating
/// linearly in log-log space and holding the end values flat.
pub fn fill_log_log(known: &[(u32, f64)], rank_max: u32) -> Result<Vec<f64>> {
    let anchors: Vec<u32> = known.iter().map(|&(r, _)| r).collect();
    let logs: Vec<f64> = known
        .iter()
        .map(|&(r, v)| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(Error::Domain(format!("value at rank {r} must be positive, got {v}")))
            }
        })
        .collect::<Result<_>>()?;
    let map = LogLogMap::new(&anchors, rank_max)?;
    Ok(map.expand(&logs).into_iter().map(f64::exp).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_law_between_anchors() {
        // p(1) = 1, p(100) = 0.01 -> p(r) = 1/r
        let filled = fill_log_log(&[(1, 1.0), (100, 0.01)], 120).unwrap();
        assert_relative_eq!(filled[9], 0.1, max_relative = 1e-12);
        assert_relative_eq!(filled[49], 0.02, max_relative = 1e-12);
        // flat past the last anchor
        assert_relative_eq!(filled[119], 0.01, max_relative = 1e-12);
    }

    #[test]
    fn flat_before_first_anchor() {
        let filled = fill_log_log(&[(3, 0.5), (6, 0.25)], 6).unwrap();
        assert_eq!(&filled[..3], &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn pull_back_is_transpose() {
        let map = LogLogMap::new(&[1, 2, 4, 8, 20], 30).unwrap();
        let x = [0.3, -0.2, 0.7, -1.1, 0.4];
        let g: Vec<f64> = (0..30).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let lhs: f64 = map.expand(&x).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = map.pull_back(&g).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_anchors() {
        assert!(LogLogMap::new(&[], 10).is_err());
        assert!(LogLogMap::new(&[1, 1], 10).is_err());
        assert!(LogLogMap::new(&[1, 11], 10).is_err());
    }
}
