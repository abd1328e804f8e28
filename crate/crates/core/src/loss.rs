//! Proper losses and Bregman divergences on binary class probabilities.
//!
//! Divergences take the prediction first and the reference second,
//! `d(p, q) = φ(q) − φ(p) − (q − p)·φ′(p)`.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::numeric::{clip_prob, PROB_CLIP};

/// Strictly proper loss used to fit calibration maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared error, a.k.a. the Brier score.
    Mse,
    /// Log-loss. Predictions are clipped to `[1e-6, 1 - 1e-6]`.
    #[serde(alias = "ce")]
    CrossEntropy,
}

impl LossKind {
    pub fn tag(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "ce",
        }
    }

    #[inline]
    pub fn eval(self, prediction: f64, label: f64) -> f64 {
        match self {
            LossKind::Mse => {
                let d = prediction - label;
                d * d
            }
            LossKind::CrossEntropy => {
                let p = clip_prob(prediction);
                -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
            }
        }
    }

    /// Derivative of [`eval`](Self::eval) with respect to the prediction.
    /// Zero where clipping is active.
    #[inline]
    pub fn derivative(self, prediction: f64, label: f64) -> f64 {
        match self {
            LossKind::Mse => 2.0 * (prediction - label),
            LossKind::CrossEntropy => {
                if !(PROB_CLIP..=1.0 - PROB_CLIP).contains(&prediction) {
                    0.0
                } else {
                    (prediction - label) / (prediction * (1.0 - prediction))
                }
            }
        }
    }

    /// Mean loss of `map` over paired predictions and labels.
    pub fn mean_loss<F: Fn(f64) -> f64>(self, map: F, predictions: &[f64], labels: &[u8]) -> f64 {
        let total: f64 = predictions
            .iter()
            .zip(labels)
            .map(|(&p, &y)| self.eval(map(p), y as f64))
            .sum();
        total / predictions.len() as f64
    }
}

impl std::str::FromStr for LossKind {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" | "brier" => Ok(LossKind::Mse),
            "ce" | "cross_entropy" | "log_loss" => Ok(LossKind::CrossEntropy),
            other => Err(CalibError::domain(format!("unknown loss `{other}` (expected mse|ce)"))),
        }
    }
}

/// Generator of a Bregman divergence on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BregmanKind {
    /// φ(x) = x², giving the squared error.
    Squared,
    /// φ(x) = x ln x + (1 − x) ln(1 − x), giving the binary KL divergence.
    BinaryEntropy,
}

fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl BregmanKind {
    pub fn generator(self, x: f64) -> f64 {
        match self {
            BregmanKind::Squared => x * x,
            BregmanKind::BinaryEntropy => xlnx(x) + xlnx(1.0 - x),
        }
    }

    pub fn generator_derivative(self, x: f64) -> f64 {
        match self {
            BregmanKind::Squared => 2.0 * x,
            BregmanKind::BinaryEntropy => (x / (1.0 - x)).ln(),
        }
    }

    /// `d(p, q)` for prediction `p` and reference `q`.
    pub fn divergence(self, p: f64, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
            return Err(CalibError::domain(format!("divergence arguments must lie in [0,1], got ({p}, {q})")));
        }
        match self {
            BregmanKind::Squared => Ok((q - p) * (q - p)),
            BregmanKind::BinaryEntropy => {
                if p <= 0.0 || p >= 1.0 {
                    return Err(CalibError::domain(format!(
                        "binary-entropy divergence needs a prediction in (0,1), got {p}"
                    )));
                }
                let d = self.generator(q) - self.generator(p) - (q - p) * self.generator_derivative(p);
                Ok(d.max(0.0))
            }
        }
    }

    /// Expected divergence to a Bernoulli label whose mean is `c_star`.
    pub fn expected_to_label(self, prediction: f64, c_star: f64) -> Result<f64> {
        Ok(c_star * self.divergence(prediction, 1.0)? + (1.0 - c_star) * self.divergence(prediction, 0.0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(LossKind::Mse.eval(0.5, 1.0), 0.25);
        assert_eq!(LossKind::Mse.eval(0.0, 0.0), 0.0);
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_near_zero() {
        let l = LossKind::CrossEntropy.eval(1.0 - 1e-12, 1.0);
        assert!((0.0..2e-6).contains(&l), "{l}");
        assert!(LossKind::CrossEntropy.eval(0.0, 1.0).is_finite());
    }

    #[test]
    fn losses_are_strictly_proper_on_grid() {
        let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        for kind in [LossKind::Mse, LossKind::CrossEntropy] {
            for &q in &grid {
                let expected = |p: f64| q * kind.eval(p, 1.0) + (1.0 - q) * kind.eval(p, 0.0);
                let best = grid
                    .iter()
                    .copied()
                    .min_by(|a, b| expected(*a).partial_cmp(&expected(*b)).unwrap())
                    .unwrap();
                assert!((best - q).abs() < 1e-9, "{kind:?} q={q} argmin={best}");
            }
        }
    }

    #[test]
    fn loss_derivative_matches_finite_difference() {
        for kind in [LossKind::Mse, LossKind::CrossEntropy] {
            for &(p, y) in &[(0.3, 1.0), (0.8, 0.0), (0.55, 1.0)] {
                let h = 1e-7;
                let fd = (kind.eval(p + h, y) - kind.eval(p - h, y)) / (2.0 * h);
                assert!((fd - kind.derivative(p, y)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bregman_examples() {
        let d = BregmanKind::Squared.divergence(0.3, 0.5).unwrap();
        assert!((d - 0.04).abs() < 1e-15);
        let kl = BregmanKind::BinaryEntropy.divergence(0.5, 1.0).unwrap();
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-12);
        for kind in [BregmanKind::Squared, BregmanKind::BinaryEntropy] {
            assert_eq!(kind.divergence(0.37, 0.37).unwrap(), 0.0);
        }
    }

    #[test]
    fn binary_entropy_rejects_boundary_prediction() {
        assert!(matches!(BregmanKind::BinaryEntropy.divergence(0.0, 0.5), Err(CalibError::Domain(_))));
        assert!(BregmanKind::BinaryEntropy.divergence(1.0, 0.5).is_err());
        assert!(BregmanKind::Squared.divergence(1.0, 0.5).is_ok());
    }

    #[test]
    fn squared_bregman_is_squared_error_on_grid() {
        for i in 0..=100 {
            for j in 0..=100 {
                let (p, q) = (i as f64 / 100.0, j as f64 / 100.0);
                assert_eq!(BregmanKind::Squared.divergence(p, q).unwrap(), (q - p) * (q - p));
            }
        }
    }

    #[test]
    fn divergences_nonnegative() {
        for i in 1..100 {
            for j in 0..=100 {
                let (p, q) = (i as f64 / 100.0, j as f64 / 100.0);
                assert!(BregmanKind::BinaryEntropy.divergence(p, q).unwrap() >= 0.0);
            }
        }
    }
}
