//! Continuous piecewise-linear calibration maps in probability space (PL) or
//! logit-logit space (PL3).
//!
//! Bin widths are the softmax of `θ_B`, and boundaries are their cumulative
//! sum, with `B_0 = 0` and `B_b = 1` fixed. In probability space the knot
//! heights are `σ(θ_H)`. In logit space the knots sit at `logit(clip(B))`,
//! the heights are `θ_H` unchanged, and the interpolated value is passed through `σ`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::cv::{fold_indices, select_regularised, training_indices, DEFAULT_FOLDS};
use crate::dataset::BinaryDataset;
use crate::error::{CalibError, Result};
use crate::loss::LossKind;
use crate::map::CalibrationMap;
use crate::numeric::{derive_seed, logit, logit_unclipped, sigmoid, PROB_CLIP};

/// Initial bins are never narrower than this, even when training
/// predictions are tied.
const MIN_INIT_WIDTH: f64 = 1e-6;

/// Heights of a probability-space identity map are kept this far from 0 and 1
/// so that their logistic parameters stay finite.
const HEIGHT_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Probability,
    Logit,
}

impl Space {
    pub fn tag(self) -> &'static str {
        match self {
            Space::Probability => "probability",
            Space::Logit => "logit",
        }
    }

    /// Input transform into working coordinates.
    #[inline]
    pub fn to_working(self, p: f64) -> f64 {
        match self {
            Space::Probability => p.clamp(0.0, 1.0),
            Space::Logit => logit(p),
        }
    }
}

impl std::str::FromStr for Space {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" | "prob" | "pl" => Ok(Space::Probability),
            "logit" | "pl3" => Ok(Space::Logit),
            other => Err(CalibError::domain(format!("unknown space `{other}` (expected probability|logit)"))),
        }
    }
}

/// Quantities derived from the raw parameters, cached between updates.
#[derive(Debug, Clone, PartialEq, Default)]
struct Knots {
    /// `softmax(θ_B)`.
    widths: Vec<f64>,
    /// Probability-space boundaries `B_0..=B_b`.
    bounds: Vec<f64>,
    /// Knot positions in working space.
    x: Vec<f64>,
    /// Knot heights in working space.
    h: Vec<f64>,
}

impl Knots {
    fn derive(space: Space, theta_b: &[f64], theta_h: &[f64]) -> Self {
        let b = theta_b.len();
        let max = theta_b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut widths: Vec<f64> = theta_b.iter().map(|t| (t - max).exp()).collect();
        let total: f64 = widths.iter().sum();
        widths.iter_mut().for_each(|w| *w /= total);

        let mut bounds = Vec::with_capacity(b + 1);
        let mut acc = 0.0;
        bounds.push(0.0);
        for w in &widths[..b - 1] {
            acc += w;
            bounds.push(acc.min(1.0));
        }
        bounds.push(1.0);

        let (x, h) = match space {
            Space::Probability => (bounds.clone(), theta_h.iter().map(|&t| sigmoid(t)).collect()),
            Space::Logit => (bounds.iter().map(|&bd| logit(bd)).collect(), theta_h.to_vec()),
        };
        Self { widths, bounds, x, h }
    }

    /// Index `k` of the segment `[x_k, x_{k+1})` containing `x`; the last one is closed.
    #[inline]
    fn segment(&self, x: f64) -> usize {
        let b = self.x.len() - 1;
        self.x[1..b].partition_point(|&knot| knot <= x)
    }

    /// Interpolated working-space value with the segment and its weight `t`.
    #[inline]
    fn interpolate(&self, x: f64) -> (f64, usize, f64) {
        let k = self.segment(x);
        let left = x - self.x[k];
        let right = self.x[k + 1] - x;
        let span = left + right;
        if span > 0.0 {
            let t = left / span;
            ((self.h[k] * right + self.h[k + 1] * left) / span, k, t)
        } else {
            (self.h[k], k, 0.0)
        }
    }
}

/// A `b`-segment continuous piecewise-linear calibration map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlModelRepr", into = "PlModelRepr")]
pub struct PlModel {
    space: Space,
    /// `θ_B` (length `b`) followed by `θ_H` (length `b + 1`).
    params: Vec<f64>,
    knots: Knots,
}

#[derive(Serialize, Deserialize)]
struct PlModelRepr {
    space: Space,
    b: usize,
    #[serde(rename = "theta_B")]
    theta_b: Vec<f64>,
    #[serde(rename = "theta_H")]
    theta_h: Vec<f64>,
}

impl TryFrom<PlModelRepr> for PlModel {
    type Error = CalibError;

    fn try_from(r: PlModelRepr) -> Result<Self> {
        if r.theta_b.len() != r.b {
            return Err(CalibError::domain(format!("theta_B has {} entries, expected b = {}", r.theta_b.len(), r.b)));
        }
        PlModel::new(r.space, r.theta_b, r.theta_h)
    }
}

impl From<PlModel> for PlModelRepr {
    fn from(m: PlModel) -> Self {
        Self { space: m.space, b: m.segments(), theta_b: m.theta_b().to_vec(), theta_h: m.theta_h().to_vec() }
    }
}

impl PlModel {
    pub fn new(space: Space, theta_b: Vec<f64>, theta_h: Vec<f64>) -> Result<Self> {
        let b = theta_b.len();
        if b == 0 {
            return Err(CalibError::domain("a piecewise-linear map needs at least one segment"));
        }
        if theta_h.len() != b + 1 {
            return Err(CalibError::domain(format!("theta_H has {} entries, expected b + 1 = {}", theta_h.len(), b + 1)));
        }
        if theta_b.iter().chain(&theta_h).any(|v| !v.is_finite()) {
            return Err(CalibError::domain("parameters must be finite"));
        }
        let mut params = theta_b;
        params.extend(theta_h);
        let mut model = Self { space, params, knots: Knots::default() };
        model.refresh();
        Ok(model)
    }

    /// The identity map on `b` equal-width segments.
    pub fn identity(space: Space, b: usize) -> Result<Self> {
        Self::identity_with_widths(space, vec![1.0 / b.max(1) as f64; b])
    }

    /// The identity map whose segments hold equal numbers of `predictions`.
    pub fn identity_for_data(space: Space, b: usize, predictions: &[f64]) -> Result<Self> {
        if b == 0 {
            return Err(CalibError::domain("a piecewise-linear map needs at least one segment"));
        }
        if predictions.is_empty() {
            return Self::identity(space, b);
        }
        let mut sorted = predictions.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut bounds = vec![0.0];
        for j in 1..b {
            let pos = j * n / b;
            let q = if pos == 0 {
                sorted[0]
            } else if pos >= n {
                sorted[n - 1]
            } else {
                0.5 * (sorted[pos - 1] + sorted[pos])
            };
            bounds.push(q.clamp(0.0, 1.0));
        }
        bounds.push(1.0);
        let widths = bounds.windows(2).map(|w| (w[1] - w[0]).max(MIN_INIT_WIDTH)).collect();
        Self::identity_with_widths(space, widths)
    }

    fn identity_with_widths(space: Space, widths: Vec<f64>) -> Result<Self> {
        let b = widths.len();
        if b == 0 {
            return Err(CalibError::domain("a piecewise-linear map needs at least one segment"));
        }
        let total: f64 = widths.iter().sum();
        let theta_b: Vec<f64> = widths.iter().map(|w| (w / total).ln()).collect();
        let mut model = Self::new(space, theta_b, vec![0.0; b + 1])?;
        for j in 0..=b {
            model.params[b + j] = match space {
                Space::Probability => logit_unclipped(model.knots.bounds[j].clamp(HEIGHT_MARGIN, 1.0 - HEIGHT_MARGIN)),
                Space::Logit => model.knots.x[j],
            };
        }
        model.refresh();
        Ok(model)
    }

    fn refresh(&mut self) {
        let b = self.segments();
        self.knots = Knots::derive(self.space, &self.params[..b], &self.params[b..]);
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// Number of segments `b`.
    pub fn segments(&self) -> usize {
        (self.params.len() - 1) / 2
    }

    pub fn theta_b(&self) -> &[f64] {
        &self.params[..self.segments()]
    }

    pub fn theta_h(&self) -> &[f64] {
        &self.params[self.segments()..]
    }

    /// All raw parameters, `θ_B` then `θ_H`.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replace all raw parameters, keeping the segment count.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(CalibError::domain("parameter vector has the wrong length"));
        }
        self.params.copy_from_slice(params);
        self.refresh();
        Ok(())
    }

    /// Probability-space boundaries `B_0 = 0 < … < B_b = 1`.
    pub fn boundaries(&self) -> &[f64] {
        &self.knots.bounds
    }

    /// Knot positions in working space.
    pub fn knot_positions(&self) -> &[f64] {
        &self.knots.x
    }

    /// Knot heights in working space (log-odds for the logit variant).
    pub fn knot_heights(&self) -> &[f64] {
        &self.knots.h
    }

    /// Map output at each knot, in probability.
    pub fn knot_outputs(&self) -> Vec<f64> {
        self.knots.h.iter().map(|&h| self.output(h)).collect()
    }

    #[inline]
    fn output(&self, v: f64) -> f64 {
        match self.space {
            Space::Probability => v,
            Space::Logit => sigmoid(v),
        }
    }

    /// `ĉ` at an already-transformed input.
    #[inline]
    fn forward_working(&self, x: f64) -> f64 {
        self.output(self.knots.interpolate(x).0)
    }

    /// Mean loss over working-space inputs.
    fn mean_loss_working(&self, xs: &[f64], targets: &[f64], loss: LossKind) -> f64 {
        let total: f64 = xs.iter().zip(targets).map(|(&x, &y)| loss.eval(self.forward_working(x), y)).sum();
        total / xs.len() as f64
    }

    /// Gradient of the mean loss over `idx` with respect to all raw
    /// parameters, written into `grad`.
    fn gradient_working(&self, xs: &[f64], targets: &[f64], idx: &[usize], loss: LossKind, grad: &mut [f64]) {
        let b = self.segments();
        let k = &self.knots;
        let mut g_x = vec![0.0; b + 1];
        let mut g_h = vec![0.0; b + 1];
        let scale = 1.0 / idx.len() as f64;
        for &i in idx {
            let x = xs[i];
            let (v, seg, t) = k.interpolate(x);
            let out = self.output(v);
            let mut d = loss.derivative(out, targets[i]) * scale;
            if self.space == Space::Logit {
                d *= out * (1.0 - out);
            }
            if d == 0.0 {
                continue;
            }
            g_h[seg] += d * (1.0 - t);
            g_h[seg + 1] += d * t;
            let span = k.x[seg + 1] - k.x[seg];
            if span > 0.0 {
                let slope = (k.h[seg + 1] - k.h[seg]) / span;
                g_x[seg] -= d * slope * (1.0 - t);
                g_x[seg + 1] -= d * slope * t;
            }
        }

        // Knot positions to probability-space boundaries; the endpoints are fixed.
        let mut g_b = vec![0.0; b + 1];
        for j in 1..b {
            let bj = k.bounds[j];
            g_b[j] = match self.space {
                Space::Probability => g_x[j],
                Space::Logit if bj > PROB_CLIP && bj < 1.0 - PROB_CLIP => g_x[j] / (bj * (1.0 - bj)),
                Space::Logit => 0.0,
            };
        }
        // B_j = Σ_{m<j} s_m gives dB_j/dθ_m = s_m·([m < j] − B_j).
        let weighted: f64 = (1..b).map(|j| g_b[j] * k.bounds[j]).sum();
        let mut suffix = 0.0;
        for m in (0..b).rev() {
            if m + 1 < b {
                suffix += g_b[m + 1];
            }
            grad[m] = k.widths[m] * (suffix - weighted);
        }
        for j in 0..=b {
            grad[b + j] = match self.space {
                Space::Probability => g_h[j] * k.h[j] * (1.0 - k.h[j]),
                Space::Logit => g_h[j],
            };
        }
    }
}

impl CalibrationMap for PlModel {
    fn apply(&self, p: f64) -> f64 {
        self.forward_working(self.space.to_working(p))
    }
}

/// `ĉ(p̂)` for a single model.
pub fn pl_forward(model: &PlModel, p: f64) -> f64 {
    model.apply(p)
}

/// Gradient of the mean batch loss with respect to `(θ_B, θ_H)`.
pub fn pl_gradient(model: &PlModel, batch: &BinaryDataset, loss: LossKind) -> Result<Vec<f64>> {
    let targets: Vec<f64> = batch.labels().iter().map(|&y| f64::from(y)).collect();
    pl_gradient_targets(model, batch.predictions(), &targets, loss)
}

/// [`pl_gradient`] against real-valued targets in `[0, 1]`.
pub fn pl_gradient_targets(model: &PlModel, predictions: &[f64], targets: &[f64], loss: LossKind) -> Result<Vec<f64>> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(CalibError::domain("gradient needs a non-empty batch with one target per prediction"));
    }
    let xs: Vec<f64> = predictions.iter().map(|&p| model.space.to_working(p)).collect();
    let idx: Vec<usize> = (0..xs.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    model.gradient_working(&xs, targets, &idx, loss, &mut grad);
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    /// Fixed minibatch size; `None` uses [`TrainConfig::default_batch_size`].
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossKind, seed: u64) -> Self {
        Self { loss, max_epochs: 1500, patience: 20, adam: AdamConfig::default(), batch_size: None, seed }
    }

    /// A quarter of the data, at most 512, at least 1.
    pub fn default_batch_size(n: usize) -> usize {
        (n / 4).min(512).clamp(1, n.max(1))
    }

    pub fn batch_size_for(&self, n: usize) -> usize {
        self.batch_size.unwrap_or_else(|| Self::default_batch_size(n)).clamp(1, n.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.patience >= self.max_epochs {
            return Err(CalibError::domain("need 0 < patience < max_epochs"));
        }
        if !(self.adam.learning_rate > 0.0) || self.batch_size == Some(0) {
            return Err(CalibError::domain("learning rate and batch size must be positive"));
        }
        Ok(())
    }
}

/// Train a `b`-segment map from an identity initialisation with Adam and
/// early stopping on the full training loss. Returns the best epoch seen.
pub fn train_pl(dataset: &BinaryDataset, b: usize, space: Space, config: &TrainConfig) -> Result<PlModel> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(CalibError::domain("cannot train on an empty dataset"));
    }
    let targets: Vec<f64> = dataset.labels().iter().map(|&y| f64::from(y)).collect();
    train_on(dataset.predictions(), &targets, b, space, config)
}

fn train_on(predictions: &[f64], targets: &[f64], b: usize, space: Space, config: &TrainConfig) -> Result<PlModel> {
    let n = predictions.len();
    let xs: Vec<f64> = predictions.iter().map(|&p| space.to_working(p)).collect();
    let mut model = PlModel::identity_for_data(space, b, predictions)?;
    let mut best = model.clone();
    let mut best_loss = model.mean_loss_working(&xs, targets, config.loss);

    let batch = config.batch_size_for(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = AdamState::new(model.params.len());
    let mut grad = vec![0.0; model.params.len()];
    let mut stale = 0;
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            model.gradient_working(&xs, targets, chunk, config.loss, &mut grad);
            adam_step(&mut adam, &mut model.params, &grad, &config.adam);
            model.refresh();
        }
        let loss = model.mean_loss_working(&xs, targets, config.loss);
        if loss < best_loss {
            best_loss = loss;
            best.params.copy_from_slice(&model.params);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    best.refresh();
    Ok(best)
}

/// Fold models at the cross-validated segment count; predictions are their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlEnsemble {
    pub space: Space,
    pub chosen_b: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Pooled held-out loss for every candidate segment count.
    pub cv_losses: Vec<(usize, f64)>,
    pub models: Vec<PlModel>,
}

impl PlEnsemble {
    /// An ensemble of arbitrary models sharing a space and segment count.
    pub fn from_models(models: Vec<PlModel>, loss: LossKind, seed: u64) -> Result<Self> {
        let first = models.first().ok_or_else(|| CalibError::domain("ensemble needs at least one model"))?;
        let (space, b) = (first.space, first.segments());
        if models.iter().any(|m| m.space != space || m.segments() != b) {
            return Err(CalibError::domain("ensemble models must share space and segment count"));
        }
        Ok(Self { space, chosen_b: b, seed, loss, cv_losses: Vec::new(), models })
    }
}

impl CalibrationMap for PlEnsemble {
    fn apply(&self, p: f64) -> f64 {
        let x = self.space.to_working(p);
        let total: f64 = self.models.iter().map(|m| m.forward_working(x)).sum();
        (total / self.models.len() as f64).clamp(0.0, 1.0)
    }
}

pub fn pl_ensemble_predict(ensemble: &PlEnsemble, p: f64) -> f64 {
    ensemble.apply(p)
}

/// Segment counts tried by [`pl_cv_fit`].
pub fn default_pl_candidates(n: usize) -> Vec<usize> {
    if n <= 1000 {
        (1..=6).collect()
    } else {
        (1..=16).collect()
    }
}

/// Ten-fold cross-validated fit over [`default_pl_candidates`].
pub fn pl_cv_fit(dataset: &BinaryDataset, space: Space, loss: LossKind, seed: u64) -> Result<PlEnsemble> {
    pl_cv_fit_with(dataset, space, &TrainConfig::new(loss, seed), &default_pl_candidates(dataset.len()))
}

/// Cross-validated fit with an explicit training recipe and candidate set.
/// Fold and candidate cells run in parallel with independent derived seeds.
pub fn pl_cv_fit_with(dataset: &BinaryDataset, space: Space, config: &TrainConfig, candidates: &[usize]) -> Result<PlEnsemble> {
    config.validate()?;
    let n = dataset.len();
    if n < DEFAULT_FOLDS {
        return Err(CalibError::domain(format!("cross-validation needs at least {DEFAULT_FOLDS} rows, got {n}")));
    }
    if candidates.is_empty() || candidates.contains(&0) {
        return Err(CalibError::domain("candidate segment counts must be positive"));
    }
    let folds = fold_indices(n, DEFAULT_FOLDS, config.seed)?;
    let preds = dataset.predictions();
    let targets: Vec<f64> = dataset.labels().iter().map(|&y| f64::from(y)).collect();
    let cells: Vec<(usize, usize)> =
        candidates.iter().flat_map(|&b| (0..DEFAULT_FOLDS).map(move |f| (b, f))).collect();

    let trained: Vec<Result<(usize, PlModel, f64)>> = cells
        .par_iter()
        .map(|&(b, f)| {
            let train = training_indices(&folds, f);
            let p: Vec<f64> = train.iter().map(|&i| preds[i]).collect();
            let y: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
            let cell = TrainConfig { seed: derive_seed(config.seed, (b as u64) << 8 | f as u64), ..*config };
            let model = train_on(&p, &y, b, space, &cell)?;
            let held: f64 = folds[f].iter().map(|&i| config.loss.eval(model.apply(preds[i]), targets[i])).sum();
            Ok((b, model, held))
        })
        .collect();

    let mut per_b: Vec<(usize, f64, Vec<PlModel>)> = candidates.iter().map(|&b| (b, 0.0, Vec::new())).collect();
    for cell in trained {
        let (b, model, held) = cell?;
        let slot = per_b.iter_mut().find(|s| s.0 == b).expect("candidate present");
        slot.1 += held;
        slot.2.push(model);
    }
    let cv_losses: Vec<(usize, f64)> = per_b.iter().map(|(b, total, _)| (*b, total / n as f64)).collect();
    let chosen_b = select_regularised(&cv_losses)?;
    let models = per_b.into_iter().find(|s| s.0 == chosen_b).map(|s| s.2).expect("chosen candidate present");
    Ok(PlEnsemble { space, chosen_b, seed: config.seed, loss: config.loss, cv_losses, models })
}
