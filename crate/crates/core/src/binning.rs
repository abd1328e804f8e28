//! Binned reliability diagrams and the binned expected calibration error.
//!
//! Binned ECE is itself a fit-on-the-test measure: fitting one slope-1
//! segment per bin by least squares puts each segment through
//! `(p̄_k, ȳ_k)`, and the mean instance-wise distance of that "tilted roof"
//! to the diagonal equals `ECE^(α)` for every α. [`TiltedMap`] is that fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{fold_indices, select_regularised, training_indices};
use crate::dataset::BinaryDataset;
use crate::error::{CalibError, Result};
use crate::loss::LossKind;
use crate::map::CalibrationMap;

/// Right edge of the last bin, so that `p̂ = 1` falls inside it.
pub const LAST_EDGE: f64 = 1.0 + 1e-9;

/// Integration grid for the debiasing integral.
pub const DEBIAS_POINTS: usize = 10_000;
/// Half-width of the debiasing integration window, in standard deviations.
pub const DEBIAS_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningScheme {
    EqualWidth,
    EqualSize,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    boundaries: Vec<f64>,
    scheme: BinningScheme,
}

impl Binning {
    /// Validates `0 = B_1 < … < B_{b+1}` with `B_{b+1} > 1`.
    pub fn explicit(boundaries: Vec<f64>) -> Result<Self> {
        Self::with_scheme(boundaries, BinningScheme::Explicit)
    }

    fn with_scheme(boundaries: Vec<f64>, scheme: BinningScheme) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(CalibError::domain("a binning needs at least two boundaries"));
        }
        if boundaries[0] != 0.0 {
            return Err(CalibError::domain("first bin boundary must be 0"));
        }
        if *boundaries.last().unwrap() <= 1.0 {
            return Err(CalibError::domain("last bin boundary must exceed 1"));
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CalibError::domain("bin boundaries must be strictly increasing"));
        }
        Ok(Self { boundaries, scheme })
    }

    pub fn equal_width(b: usize) -> Result<Self> {
        if b == 0 {
            return Err(CalibError::domain("number of bins must be positive"));
        }
        let mut boundaries: Vec<f64> = (0..b).map(|k| k as f64 / b as f64).collect();
        boundaries.push(LAST_EDGE);
        Self::with_scheme(boundaries, BinningScheme::EqualWidth)
    }

    /// Equal-count binning over predictions already sorted ascending.
    ///
    /// Bin sizes follow `n / b` with the remainder going to the first bins.
    /// A split falling between two equal predictions is dropped, merging the
    /// neighbouring bins, so ties never straddle a boundary.
    pub fn equal_size_sorted(sorted: &[f64], b: usize) -> Result<Self> {
        let n = sorted.len();
        if b == 0 {
            return Err(CalibError::domain("number of bins must be positive"));
        }
        if b > n {
            return Err(CalibError::domain(format!("cannot form {b} equal-size bins from {n} predictions")));
        }
        let mut boundaries = vec![0.0];
        for j in split_positions(n, b) {
            let (left, right) = (sorted[j - 1], sorted[j]);
            if left < right {
                boundaries.push(0.5 * (left + right));
            }
        }
        boundaries.push(LAST_EDGE);
        Self::with_scheme(boundaries, BinningScheme::EqualSize)
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn scheme(&self) -> BinningScheme {
        self.scheme
    }

    pub fn n_bins(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Index `k` with `B_k ≤ p < B_{k+1}`; out-of-range inputs go to the nearest end bin.
    #[inline]
    pub fn bin_index(&self, p: f64) -> usize {
        self.boundaries
            .partition_point(|&b| b <= p)
            .saturating_sub(1)
            .min(self.n_bins() - 1)
    }
}

/// Sorted positions `j` (1 ≤ j < n) where equal-size bin `k` ends and `k + 1` begins.
fn split_positions(n: usize, b: usize) -> impl Iterator<Item = usize> {
    let (base, extra) = (n / b, n % b);
    (1..b).map(move |k| k * base + k.min(extra))
}

pub fn build_binning(dataset: &BinaryDataset, scheme: BinningScheme, b: usize) -> Result<Binning> {
    match scheme {
        BinningScheme::EqualWidth => Binning::equal_width(b),
        BinningScheme::EqualSize => {
            let mut sorted = dataset.predictions().to_vec();
            sorted.sort_by(f64::total_cmp);
            Binning::equal_size_sorted(&sorted, b)
        }
        BinningScheme::Explicit => Err(CalibError::domain("explicit binnings are built with Binning::explicit")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_pred: Option<f64>,
    pub mean_label: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    binning: Binning,
    bins: Vec<BinStats>,
    n: usize,
}

pub fn reliability_diagram(dataset: &BinaryDataset, binning: &Binning) -> ReliabilityDiagram {
    let b = binning.n_bins();
    let mut counts = vec![0usize; b];
    let mut sum_p = vec![0.0; b];
    let mut sum_y = vec![0.0; b];
    let mut lo = vec![f64::INFINITY; b];
    let mut hi = vec![f64::NEG_INFINITY; b];
    for (p, y) in dataset.iter() {
        let k = binning.bin_index(p);
        counts[k] += 1;
        sum_p[k] += p;
        sum_y[k] += y;
        lo[k] = lo[k].min(p);
        hi[k] = hi[k].max(p);
    }
    // Rounding can push the mean of tied predictions just outside their bin.
    let bins = (0..b)
        .map(|k| BinStats {
            count: counts[k],
            mean_pred: (counts[k] > 0).then(|| (sum_p[k] / counts[k] as f64).clamp(lo[k], hi[k])),
            mean_label: (counts[k] > 0).then(|| sum_y[k] / counts[k] as f64),
        })
        .collect();
    ReliabilityDiagram { binning: binning.clone(), bins, n: dataset.len() }
}

impl ReliabilityDiagram {
    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    pub fn bins(&self) -> &[BinStats] {
        &self.bins
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn occupied(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.bins
            .iter()
            .filter_map(|s| Some((s.count, s.mean_pred?, s.mean_label?)))
    }

    /// Whether mean labels of the occupied bins are nondecreasing.
    pub fn is_monotone(&self) -> bool {
        let labels: Vec<f64> = self.occupied().map(|(_, _, y)| y).collect();
        labels.windows(2).all(|w| w[0] <= w[1])
    }

    /// Plot-ready per-bin records.
    pub fn records(&self) -> Vec<BinRecord> {
        let tilted = tilted_roof_map(self);
        let edges = self.binning.boundaries();
        self.bins
            .iter()
            .enumerate()
            .map(|(k, s)| BinRecord {
                left: edges[k],
                right: edges[k + 1],
                count: s.count,
                mean_pred: s.mean_pred,
                mean_label: s.mean_label,
                tilted_height: tilted.heights[k],
            })
            .collect()
    }
}

/// One bin of an exported diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    pub mean_pred: Option<f64>,
    pub mean_label: Option<f64>,
    pub tilted_height: f64,
}

/// `ECE^(α)_B = (1/n) Σ_k n_k |ȳ_k − p̄_k|^α`; empty bins contribute nothing.
pub fn ece_binned(diagram: &ReliabilityDiagram, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(CalibError::domain(format!("exponent must be positive, got {alpha}")));
    }
    let total: f64 = diagram
        .occupied()
        .map(|(n_k, p, y)| n_k as f64 * (y - p).abs().powf(alpha))
        .sum();
    Ok(total / diagram.n as f64)
}

/// Piecewise map with slope 1 in every bin: `ĉ(p̂) = H_k + (p̂ − B_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltedMap {
    binning: Binning,
    heights: Vec<f64>,
}

impl TiltedMap {
    pub fn new(binning: Binning, heights: Vec<f64>) -> Result<Self> {
        if heights.len() != binning.n_bins() {
            return Err(CalibError::domain(format!(
                "{} heights for {} bins",
                heights.len(),
                binning.n_bins()
            )));
        }
        Ok(Self { binning, heights })
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    /// Map value at the left edge of each bin.
    pub fn heights(&self) -> &[f64] {
        &self.heights
    }
}

impl CalibrationMap for TiltedMap {
    #[inline]
    fn apply(&self, p: f64) -> f64 {
        let k = self.binning.bin_index(p);
        self.heights[k] + (p - self.binning.boundaries[k])
    }
}

/// The least-squares slope-1 fit: `H_k = B_k + (ȳ_k − p̄_k)`, identity on empty bins.
pub fn tilted_roof_map(diagram: &ReliabilityDiagram) -> TiltedMap {
    let edges = diagram.binning.boundaries();
    let heights = diagram
        .bins
        .iter()
        .enumerate()
        .map(|(k, s)| match (s.mean_pred, s.mean_label) {
            (Some(p), Some(y)) => edges[k] + (y - p),
            _ => edges[k],
        })
        .collect();
    TiltedMap { binning: diagram.binning.clone(), heights }
}

/// `E|p̄ − R|` for `R ~ N(mean, sd²)` by the trapezoidal rule on
/// `DEBIAS_POINTS` equally spaced nodes within `DEBIAS_SIGMAS` deviations.
pub fn expected_abs_gap(p_bar: f64, mean: f64, sd: f64) -> f64 {
    if !(sd > 0.0) {
        return (p_bar - mean).abs();
    }
    let lo = mean - DEBIAS_SIGMAS * sd;
    let hi = mean + DEBIAS_SIGMAS * sd;
    let h = (hi - lo) / (DEBIAS_POINTS - 1) as f64;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let f = |x: f64| {
        let z = (x - mean) / sd;
        (p_bar - x).abs() * norm * (-0.5 * z * z).exp()
    };
    let interior: f64 = (1..DEBIAS_POINTS - 1).map(|i| f(lo + i as f64 * h)).sum();
    h * (0.5 * (f(lo) + f(hi)) + interior)
}

/// Binned ECE (α = 1) minus a per-bin Gaussian resampling bias estimate.
///
/// Each bin's mean label is treated as `R_k ~ N(ȳ_k, ȳ_k(1 − ȳ_k)/n_k)` and
/// the bias is `Σ_k (n_k/n)(E|p̄_k − R_k| − |p̄_k − ȳ_k|)`. The result is not
/// floored at zero.
pub fn debias_ece(diagram: &ReliabilityDiagram) -> f64 {
    let n = diagram.n as f64;
    let mut raw = 0.0;
    let mut bias = 0.0;
    for (n_k, p, y) in diagram.occupied() {
        let gap = (p - y).abs();
        let sd = (y * (1.0 - y) / n_k as f64).sqrt();
        raw += n_k as f64 * gap;
        bias += n_k as f64 * (expected_abs_gap(p, y, sd) - gap);
    }
    (raw - bias) / n
}

/// Largest `b ∈ 1..=n` whose reliability diagram has nondecreasing mean labels.
pub fn sweep_select(dataset: &BinaryDataset, scheme: BinningScheme) -> Result<usize> {
    let sorted = dataset.sorted();
    let preds = sorted.predictions();
    let n = preds.len();
    let mut prefix_y = Vec::with_capacity(n + 1);
    prefix_y.push(0.0);
    for &y in sorted.labels() {
        prefix_y.push(prefix_y.last().unwrap() + y as f64);
    }
    let monotone_ranges = |cuts: &mut dyn Iterator<Item = usize>| -> bool {
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        for end in cuts.chain(std::iter::once(n)) {
            if end > start {
                let mean = (prefix_y[end] - prefix_y[start]) / (end - start) as f64;
                if mean < prev {
                    return false;
                }
                prev = mean;
                start = end;
            }
        }
        true
    };
    let mut best = 1;
    for b in 2..=n {
        let monotone = match scheme {
            BinningScheme::EqualSize => {
                let mut cuts = split_positions(n, b).filter(|&j| preds[j - 1] < preds[j]);
                monotone_ranges(&mut cuts)
            }
            BinningScheme::EqualWidth => {
                let mut cuts = (1..b).map(|k| {
                    let edge = k as f64 / b as f64;
                    preds.partition_point(|&p| p < edge)
                });
                monotone_ranges(&mut cuts)
            }
            BinningScheme::Explicit => {
                return Err(CalibError::domain("sweep needs an equal-width or equal-size scheme"))
            }
        };
        if monotone {
            best = b;
        }
    }
    Ok(best)
}

/// Default candidate bin counts for cross-validated binning.
pub fn default_cv_candidates() -> Vec<usize> {
    (1..=30).collect()
}

/// Outcome of a cross-validated bin-count search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub chosen: usize,
    /// Mean held-out loss per candidate; infinite when a candidate cannot be built on some fold.
    pub losses: Vec<(usize, f64)>,
}

/// k-fold cross-validation of the tilted-roof fit over candidate bin counts.
pub fn cv_select_bins(
    dataset: &BinaryDataset,
    scheme: BinningScheme,
    candidates: &[usize],
    folds: usize,
    loss: LossKind,
    seed: u64,
) -> Result<CvSelection> {
    if candidates.is_empty() || candidates.contains(&0) {
        return Err(CalibError::domain("candidate bin counts must be non-empty and positive"));
    }
    let fold_sets = fold_indices(dataset.len(), folds, seed)?;
    let splits: Vec<(BinaryDataset, BinaryDataset)> = (0..folds)
        .map(|f| Ok((dataset.select(&training_indices(&fold_sets, f))?, dataset.select(&fold_sets[f])?)))
        .collect::<Result<_>>()?;
    let losses: Vec<(usize, f64)> = candidates
        .par_iter()
        .map(|&b| {
            let mut total = 0.0;
            for (train, held_out) in &splits {
                let Ok(binning) = build_binning(train, scheme, b) else {
                    return (b, f64::INFINITY);
                };
                let map = tilted_roof_map(&reliability_diagram(train, &binning));
                total += held_out
                    .iter()
                    .map(|(p, y)| loss.eval(map.apply(p), y))
                    .sum::<f64>();
            }
            (b, total / dataset.len() as f64)
        })
        .collect();
    let chosen = select_regularised(&losses)?;
    Ok(CvSelection { chosen, losses })
}
