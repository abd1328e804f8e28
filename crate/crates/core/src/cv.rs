//! Fold splitting and the complexity-preferring model selection rule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CalibError, Result};

pub const DEFAULT_FOLDS: usize = 10;

/// A larger candidate is only preferred if it beats every smaller one by more
/// than this relative margin.
pub const REGULARISATION_TOLERANCE: f64 = 1e-3;

/// Seeded shuffle of `0..n` split into `k` contiguous folds whose sizes
/// differ by at most one (larger folds first).
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(CalibError::domain("number of folds must be positive"));
    }
    if n < k {
        return Err(CalibError::domain(format!("{n} rows cannot be split into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// Indices outside fold `f`, in ascending order.
pub fn training_indices(folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != f)
        .flat_map(|(_, fold)| fold.iter().copied())
        .collect();
    idx.sort_unstable();
    idx
}

/// Smallest candidate whose loss is within `(1 + 0.001)` of the minimum.
/// Non-finite losses mark infeasible candidates.
pub fn select_regularised(losses: &[(usize, f64)]) -> Result<usize> {
    let best = losses
        .iter()
        .map(|&(_, l)| l)
        .filter(|l| l.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(CalibError::domain("no feasible candidate"));
    }
    let threshold = best * (1.0 + REGULARISATION_TOLERANCE);
    losses
        .iter()
        .filter(|&&(_, l)| l.is_finite() && l <= threshold)
        .map(|&(b, _)| b)
        .min()
        .ok_or_else(|| CalibError::domain("no feasible candidate"))
}
