//! Shared inputs for the benchmark suite.

use ckprof_core::{generate_tree, CallTree, CheckpointConfig, CostRanges};

/// The desk-scale stand-in for a large adjoint: 85 checkpoint sites.
pub fn large_tree() -> CallTree {
    generate_tree(7, 85, 4, &CostRanges::default()).expect("valid generator parameters")
}

/// A tree small enough for full trajectories and exhaustive enumeration.
pub fn small_tree() -> CallTree {
    generate_tree(3, 10, 2, &CostRanges::default()).expect("valid generator parameters")
}

pub fn all_active() -> CheckpointConfig {
    CheckpointConfig::default()
}
