//! Shared fixtures for the criterion benches.

use propensity_core::{simulate_pairs, simulate_raw_groups, PairGroup, SimConfig};

/// Retained pairs from the default simulation, truncated to `n`.
pub fn simulated_pairs(n: usize, seed: u64) -> Vec<PairGroup> {
    let cfg = SimConfig {
        n_pairs_target: n,
        seed,
        ..Default::default()
    };
    simulate_pairs(&cfg).expect("valid config").groups
}

/// The unselected log behind `simulated_pairs(n, seed)`.
pub fn simulated_raw_groups(n: usize, seed: u64) -> Vec<PairGroup> {
    let cfg = SimConfig {
        n_pairs_target: n,
        seed,
        ..Default::default()
    };
    simulate_raw_groups(&cfg).expect("valid config").groups
}
