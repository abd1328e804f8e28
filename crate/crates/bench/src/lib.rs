//! Shared fixtures for the calibkit benchmarks.

use calibkit::{generate_dataset, solve_mixing, BinaryDataset, Shape};

/// Synthetic dataset with the given shape and true calibration error.
pub fn fixture(shape: Shape, target_ce: f64, n: usize, seed: u64) -> BinaryDataset {
    let lambda = solve_mixing(shape, target_ce).expect("reachable target");
    generate_dataset(shape, lambda, n, seed).expect("valid parameters").dataset
}

/// The sizes the scaling benchmarks sweep over.
pub const SIZES: [usize; 3] = [1_000, 10_000, 100_000];
