//! Classical post-hoc calibrators: Platt, beta, temperature and isotonic.
//!
//! Platt, beta and temperature scaling minimise mean log-loss. Platt and
//! beta are logistic regressions on transformed predictions and are fitted
//! by damped Newton; the slope parameters are constrained to be nonnegative
//! so that every fitted map is nondecreasing.

use serde::{Deserialize, Serialize};

use crate::dataset::BinaryDataset;
use crate::error::{CalibError, Result};
use crate::map::CalibrationMap;
use crate::numeric::{clip_prob, logit, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params", rename_all = "snake_case")]
pub enum ScalerModel {
    /// `σ(a·logit(p̂) + b)`.
    Platt { a: f64, b: f64 },
    /// `σ(c + a·ln p̂ − b·ln(1 − p̂))`.
    Beta { a: f64, b: f64, c: f64 },
    /// `σ(logit(p̂) / t)`.
    Temperature { t: f64 },
    /// Flat steps: `levels[k]` from `thresholds[k]` up to the next threshold.
    Isotonic { thresholds: Vec<f64>, levels: Vec<f64> },
}

impl ScalerModel {
    pub fn name(&self) -> &'static str {
        match self {
            ScalerModel::Platt { .. } => "platt",
            ScalerModel::Beta { .. } => "beta",
            ScalerModel::Temperature { .. } => "temperature",
            ScalerModel::Isotonic { .. } => "isotonic",
        }
    }
}

pub fn apply_scaler(model: &ScalerModel, p: f64) -> f64 {
    match model {
        ScalerModel::Platt { a, b } => sigmoid(a * logit(p) + b),
        ScalerModel::Beta { a, b, c } => {
            let p = clip_prob(p);
            sigmoid(c + a * p.ln() - b * (1.0 - p).ln())
        }
        ScalerModel::Temperature { t } => sigmoid(logit(p) / t),
        ScalerModel::Isotonic { thresholds, levels } => {
            let k = thresholds.partition_point(|&x| x <= p).saturating_sub(1);
            levels[k]
        }
    }
}

impl CalibrationMap for ScalerModel {
    fn apply(&self, p: f64) -> f64 {
        apply_scaler(self, p)
    }
}

fn require_two_classes(dataset: &BinaryDataset) -> Result<()> {
    if dataset.len() < 2 || !dataset.has_both_classes() {
        return Err(CalibError::Degenerate(
            "parametric scalers need at least two instances and both label values; \
             use isotonic or a binned evaluator instead"
                .into(),
        ));
    }
    Ok(())
}

/// Mean log-loss of `σ(z)` against `y`, computed from the logit directly.
#[inline]
fn logistic_loss(z: f64, y: f64) -> f64 {
    // softplus(z) − y·z
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - y * z
}

const NEWTON_TOLERANCE: f64 = 1e-8;
const NEWTON_MAX_ITERS: usize = 1000;

/// Logistic regression on fixed features with some coefficients pinned at zero.
struct LogisticProblem<'a, const D: usize> {
    features: &'a [[f64; D]],
    labels: &'a [f64],
}

impl<const D: usize> LogisticProblem<'_, D> {
    fn loss(&self, w: &[f64; D]) -> f64 {
        let total: f64 = self
            .features
            .iter()
            .zip(self.labels)
            .map(|(x, &y)| logistic_loss(dot(w, x), y))
            .sum();
        total / self.features.len() as f64
    }

    fn gradient_hessian(&self, w: &[f64; D]) -> ([f64; D], [[f64; D]; D]) {
        let mut g = [0.0; D];
        let mut h = [[0.0; D]; D];
        for (x, &y) in self.features.iter().zip(self.labels) {
            let s = sigmoid(dot(w, x));
            let r = s - y;
            let curv = s * (1.0 - s);
            for i in 0..D {
                g[i] += r * x[i];
                for j in 0..D {
                    h[i][j] += curv * x[i] * x[j];
                }
            }
        }
        let n = self.features.len() as f64;
        for i in 0..D {
            g[i] /= n;
            for j in 0..D {
                h[i][j] /= n;
            }
        }
        (g, h)
    }

    /// Damped Newton over the coordinates with `free[i]`; others stay at 0.
    fn solve(&self, free: [bool; D], init: [f64; D]) -> ([f64; D], f64) {
        let mut w = init;
        for i in 0..D {
            if !free[i] {
                w[i] = 0.0;
            }
        }
        let mut loss = self.loss(&w);
        for _ in 0..NEWTON_MAX_ITERS {
            let (mut g, mut h) = self.gradient_hessian(&w);
            for i in 0..D {
                if !free[i] {
                    g[i] = 0.0;
                    for j in 0..D {
                        h[i][j] = 0.0;
                        h[j][i] = 0.0;
                    }
                    h[i][i] = 1.0;
                }
            }
            if g.iter().map(|v| v * v).sum::<f64>().sqrt() < NEWTON_TOLERANCE {
                break;
            }
            let step = solve_linear(h, g).unwrap_or(g);
            let mut scale = 1.0;
            let mut improved = false;
            for _ in 0..60 {
                let mut cand = w;
                for i in 0..D {
                    cand[i] -= scale * step[i];
                }
                let cand_loss = self.loss(&cand);
                if cand_loss <= loss {
                    improved = cand_loss < loss || scale == 1.0;
                    w = cand;
                    loss = cand_loss;
                    break;
                }
                scale *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (w, loss)
    }

    /// Minimum over the faces of `{w_i ≥ 0 for i in nonneg}`.
    ///
    /// The constrained optimum is the unconstrained optimum of one face, so
    /// solving every face and keeping the best feasible one is exact.
    fn solve_nonnegative(&self, nonneg: [bool; D], init: [f64; D]) -> [f64; D] {
        let constrained: Vec<usize> = (0..D).filter(|&i| nonneg[i]).collect();
        let mut best: Option<([f64; D], f64)> = None;
        for mask in 0..(1usize << constrained.len()) {
            let mut free = [true; D];
            for (bit, &i) in constrained.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    free[i] = false;
                }
            }
            let (w, loss) = self.solve(free, init);
            if constrained.iter().any(|&i| w[i] < 0.0) {
                continue;
            }
            if best.as_ref().is_none_or(|(_, l)| loss < *l) {
                best = Some((w, loss));
            }
        }
        // The all-pinned face is always feasible.
        best.expect("at least one feasible face").0
    }
}

#[inline]
fn dot<const D: usize>(w: &[f64; D], x: &[f64; D]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Gaussian elimination with partial pivoting for tiny dense systems.
fn solve_linear<const D: usize>(mut a: [[f64; D]; D], mut b: [f64; D]) -> Option<[f64; D]> {
    for col in 0..D {
        let pivot = (col..D).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..D {
            let f = a[row][col] / a[col][col];
            for k in col..D {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; D];
    for row in (0..D).rev() {
        let s: f64 = (row + 1..D).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn float_labels(dataset: &BinaryDataset) -> Vec<f64> {
    dataset.labels().iter().map(|&y| y as f64).collect()
}

pub fn fit_platt(dataset: &BinaryDataset) -> Result<ScalerModel> {
    require_two_classes(dataset)?;
    let features: Vec<[f64; 2]> = dataset.predictions().iter().map(|&p| [logit(p), 1.0]).collect();
    let labels = float_labels(dataset);
    let problem = LogisticProblem { features: &features, labels: &labels };
    let [a, b] = problem.solve_nonnegative([true, false], [1.0, 0.0]);
    Ok(ScalerModel::Platt { a, b })
}

pub fn fit_beta(dataset: &BinaryDataset) -> Result<ScalerModel> {
    require_two_classes(dataset)?;
    let features: Vec<[f64; 3]> = dataset
        .predictions()
        .iter()
        .map(|&p| {
            let p = clip_prob(p);
            [p.ln(), -(1.0 - p).ln(), 1.0]
        })
        .collect();
    let labels = float_labels(dataset);
    let problem = LogisticProblem { features: &features, labels: &labels };
    let [a, b, c] = problem.solve_nonnegative([true, true, false], [1.0, 1.0, 0.0]);
    Ok(ScalerModel::Beta { a, b, c })
}

pub const TEMPERATURE_RANGE: (f64, f64) = (1e-2, 1e2);
const TEMPERATURE_GRID: usize = 401;
const TEMPERATURE_REL_TOL: f64 = 1e-6;

pub fn fit_temperature(dataset: &BinaryDataset) -> Result<ScalerModel> {
    require_two_classes(dataset)?;
    let z: Vec<f64> = dataset.predictions().iter().map(|&p| logit(p)).collect();
    let labels = float_labels(dataset);
    // Objective in u = ln t.
    let objective = |u: f64| {
        let t = u.exp();
        z.iter().zip(&labels).map(|(&z, &y)| logistic_loss(z / t, y)).sum::<f64>() / z.len() as f64
    };
    let (lo, hi) = (TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln());
    let step = (hi - lo) / (TEMPERATURE_GRID - 1) as f64;
    let values: Vec<f64> = (0..TEMPERATURE_GRID).map(|i| objective(lo + i as f64 * step)).collect();
    let best = (0..TEMPERATURE_GRID)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .unwrap_or(0);
    let mut a = lo + best.saturating_sub(1) as f64 * step;
    let mut b = lo + (best + 1).min(TEMPERATURE_GRID - 1) as f64 * step;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    // A width of δ in ln t is a relative change of about δ in t.
    while b - a > TEMPERATURE_REL_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = objective(x2);
        }
    }
    let mut u = 0.5 * (a + b);
    if values[best] < objective(u) {
        u = lo + best as f64 * step;
    }
    Ok(ScalerModel::Temperature { t: u.exp() })
}

/// Pool-adjacent-violators on `(x, y, weight)` triples sorted by `x` with
/// distinct `x`. Returns `(first x, level)` per block.
fn pava(points: &[(f64, f64, f64)]) -> Vec<(f64, f64)> {
    // (start x, weighted sum, weight)
    let mut blocks: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len());
    for &(x, y, w) in points {
        blocks.push((x, y * w, w));
        while blocks.len() >= 2 {
            let last = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if prev.1 / prev.2 > last.1 / last.2 {
                blocks.pop();
                let merged = blocks.last_mut().unwrap();
                merged.1 += last.1;
                merged.2 += last.2;
            } else {
                break;
            }
        }
    }
    blocks.into_iter().map(|(x, s, w)| (x, s / w)).collect()
}

/// Least-squares nondecreasing step fit. Tied predictions are averaged first.
pub fn fit_isotonic(dataset: &BinaryDataset) -> Result<ScalerModel> {
    let sorted = dataset.sorted();
    let mut grouped: Vec<(f64, f64, f64)> = Vec::new();
    for (p, y) in sorted.iter() {
        match grouped.last_mut() {
            Some(last) if last.0 == p => {
                last.1 += y;
                last.2 += 1.0;
            }
            _ => grouped.push((p, y, 1.0)),
        }
    }
    for g in &mut grouped {
        g.1 /= g.2;
    }
    let (thresholds, levels) = pava(&grouped).into_iter().unzip();
    Ok(ScalerModel::Isotonic { thresholds, levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(p: &[f64], y: &[u8]) -> BinaryDataset {
        BinaryDataset::new(p.to_vec(), y.to_vec()).unwrap()
    }

    fn mean_log_loss(model: &ScalerModel, d: &BinaryDataset) -> f64 {
        crate::loss::LossKind::CrossEntropy.mean_loss(|p| model.apply(p), d.predictions(), d.labels())
    }

    fn sample(n: usize, seed: u64, truth: impl Fn(f64) -> f64) -> BinaryDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut p, mut y) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let x: f64 = rng.gen();
            p.push(x);
            y.push(u8::from(rng.gen::<f64>() < truth(x)));
        }
        ds(&p, &y)
    }

    #[test]
    fn identity_parameters() {
        assert!((apply_scaler(&ScalerModel::Platt { a: 1.0, b: 0.0 }, 0.42) - 0.42).abs() < 1e-12);
        assert!((apply_scaler(&ScalerModel::Beta { a: 1.0, b: 1.0, c: 0.0 }, 0.37) - 0.37).abs() < 1e-12);
        assert!((apply_scaler(&ScalerModel::Temperature { t: 1.0 }, 0.8) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn high_temperature_flattens_to_half() {
        let m = ScalerModel::Temperature { t: 100.0 };
        for p in [0.01, 0.3, 0.9, 0.999] {
            assert!((m.apply(p) - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn beta_slopes_in_logit_space() {
        let m = ScalerModel::Beta { a: 0.3, b: 1.4, c: 0.0 };
        let slope = |p: f64| {
            let h = 1e-4;
            let z = logit(p);
            let up = logit(m.apply(sigmoid(z + h)));
            let down = logit(m.apply(sigmoid(z - h)));
            (up - down) / (2.0 * h)
        };
        assert!((slope(1e-4) - 0.3).abs() / 0.3 < 0.02);
        assert!((slope(1.0 - 1e-4) - 1.4).abs() / 1.4 < 0.02);
    }

    #[test]
    fn beta_with_equal_slopes_is_platt() {
        for (a, c) in [(0.5, 0.2), (1.7, -0.4)] {
            let beta = ScalerModel::Beta { a, b: a, c };
            let platt = ScalerModel::Platt { a, b: c };
            for i in 1..100 {
                let p = i as f64 / 100.0;
                assert!((beta.apply(p) - platt.apply(p)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn platt_recovers_identity_on_calibrated_data() {
        let d = sample(100_000, 11, |x| x);
        let ScalerModel::Platt { a, b } = fit_platt(&d).unwrap() else { unreachable!() };
        assert!((a - 1.0).abs() < 0.05 && b.abs() < 0.05, "a={a} b={b}");
    }

    #[test]
    fn platt_symmetric_data_has_zero_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut p, mut y) = (Vec::new(), Vec::new());
        for _ in 0..500 {
            let x: f64 = rng.gen();
            let label = u8::from(rng.gen::<f64>() < x * x);
            p.extend([x, 1.0 - x]);
            y.extend([label, 1 - label]);
        }
        let d = ds(&p, &y);
        let ScalerModel::Platt { b, .. } = fit_platt(&d).unwrap() else { unreachable!() };
        assert!(b.abs() < 1e-6, "b={b}");
    }

    #[test]
    fn fitted_losses_dominate_identity() {
        let d = sample(5000, 2, |x| x * x);
        let platt = fit_platt(&d).unwrap();
        assert!(mean_log_loss(&platt, &d) <= mean_log_loss(&ScalerModel::Platt { a: 1.0, b: 0.0 }, &d));
        let beta = fit_beta(&d).unwrap();
        assert!(mean_log_loss(&beta, &d) <= mean_log_loss(&ScalerModel::Beta { a: 1.0, b: 1.0, c: 0.0 }, &d));
        let temp = fit_temperature(&d).unwrap();
        assert!(mean_log_loss(&temp, &d) <= mean_log_loss(&ScalerModel::Temperature { t: 1.0 }, &d));
    }

    #[test]
    fn beta_matches_grid_search_oracle() {
        let d = sample(5_000, 8, |x| x * x);
        let fitted = fit_beta(&d).unwrap();
        let fitted_loss = mean_log_loss(&fitted, &d);
        let mut best = f64::INFINITY;
        for ia in 0..=20 {
            for ib in 0..=20 {
                for ic in -10..=10 {
                    let m = ScalerModel::Beta { a: ia as f64 * 0.15, b: ib as f64 * 0.15, c: ic as f64 * 0.2 };
                    best = best.min(mean_log_loss(&m, &d));
                }
            }
        }
        assert!(fitted_loss <= best + 1e-12, "fit {fitted_loss} grid {best}");
        let truth = |p: f64| p * p;
        let cmee = |f: &dyn Fn(f64) -> f64| d.predictions().iter().map(|&p| (f(p) - truth(p)).abs()).sum::<f64>();
        assert!(cmee(&|p| fitted.apply(p)) < cmee(&|p| p));
    }

    #[test]
    fn temperature_recovers_two() {
        let d = sample(100_000, 4, |x| sigmoid(logit(x) / 2.0));
        let ScalerModel::Temperature { t } = fit_temperature(&d).unwrap() else { unreachable!() };
        // 1-D grid oracle
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=2000 {
            let cand = 1.0 + i as f64 * 0.001;
            let l = mean_log_loss(&ScalerModel::Temperature { t: cand }, &d);
            if l < best.0 {
                best = (l, cand);
            }
        }
        assert!((t - best.1).abs() < 2e-3, "t={t} oracle={}", best.1);
        assert!((t - 2.0).abs() / 2.0 < 0.05, "t={t}");
    }

    #[test]
    fn single_class_is_degenerate() {
        let d = ds(&[0.2, 0.7, 0.9], &[1, 1, 1]);
        assert!(matches!(fit_platt(&d), Err(CalibError::Degenerate(_))));
        assert!(fit_beta(&d).is_err());
        assert!(fit_temperature(&d).is_err());
        assert!(fit_isotonic(&d).is_ok());
    }

    #[test]
    fn isotonic_examples() {
        let m = fit_isotonic(&ds(&[0.1, 0.2, 0.3], &[0, 1, 1])).unwrap();
        assert_eq!(m, ScalerModel::Isotonic { thresholds: vec![0.1, 0.2, 0.3], levels: vec![0.0, 1.0, 1.0] });
        let m = fit_isotonic(&ds(&[0.1, 0.2], &[1, 0])).unwrap();
        assert_eq!(m, ScalerModel::Isotonic { thresholds: vec![0.1], levels: vec![0.5] });
        assert_eq!(m.apply(0.0), 0.5);
        assert_eq!(m.apply(1.0), 0.5);
    }

    #[test]
    fn isotonic_averages_ties_and_clamps() {
        let m = fit_isotonic(&ds(&[0.5, 0.5, 0.2, 0.9], &[1, 0, 0, 1])).unwrap();
        let ScalerModel::Isotonic { thresholds, levels } = &m else { unreachable!() };
        assert_eq!(thresholds, &vec![0.2, 0.5, 0.9]);
        assert_eq!(levels, &vec![0.0, 0.5, 1.0]);
        assert_eq!(m.apply(0.05), 0.0);
        assert_eq!(m.apply(0.7), 0.5);
    }

    #[test]
    fn serialization_shape() {
        let json = serde_json::to_value(ScalerModel::Platt { a: 1.5, b: -0.25 }).unwrap();
        assert_eq!(json, serde_json::json!({"variant": "platt", "params": {"a": 1.5, "b": -0.25}}));
        let back: ScalerModel = serde_json::from_value(json).unwrap();
        assert_eq!(back, ScalerModel::Platt { a: 1.5, b: -0.25 });
    }
}
