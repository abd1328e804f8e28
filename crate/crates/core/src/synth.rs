//! Synthetic miscalibration with exactly known true calibration maps.
//!
//! A base shape `g` maps a calibrated probability `c` to the prediction the
//! model reports. A derivate mixes it with the identity,
//! `m(c) = (1 − λ)·c + λ·g(c)`, so for uniform `c` the expected absolute
//! calibration error is linear in λ. Datasets are drawn as
//! `c ~ U(0,1)`, `y ~ Bernoulli(c)`, `p̂ = m(c)`; the true calibration map is
//! `m⁻¹`. Labels depend only on the seed, never on λ or the shape.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::BinaryDataset;
use crate::error::{CalibError, Result};
use crate::ground_truth::GroundTruthMap;
use crate::numeric::{sigmoid, simpson};

/// Number of Simpson intervals used for calibration-error integrals.
pub const CE_INTEGRAL_INTERVALS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Sqrt,
    Beta1,
    Beta2,
    Stairs,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Square, Shape::Sqrt, Shape::Beta1, Shape::Beta2, Shape::Stairs];

    pub fn tag(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Sqrt => "sqrt",
            Shape::Beta1 => "beta1",
            Shape::Beta2 => "beta2",
            Shape::Stairs => "stairs",
        }
    }

    /// `g(x)`, the prediction reported for calibrated probability `x`.
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Shape::Square => x * x,
            Shape::Sqrt => x.sqrt(),
            Shape::Beta1 => {
                let (a, b) = (0.4, 0.45);
                beta_shape(x, a, b, b * 0.6f64.ln() - a * 0.4f64.ln())
            }
            Shape::Beta2 => {
                let (a, b) = (2.0, 2.2);
                beta_shape(x, a, b, b * 0.52f64.ln() - a * 0.48f64.ln())
            }
            Shape::Stairs => {
                let base = stairs_helper(1.0 / 3.0);
                // Normalised by the helper's range so that stairs(1) is exactly 1.
                (stairs_helper(x + 1.0 / 3.0) - base) / (stairs_helper(4.0 / 3.0) - base)
            }
        }
    }

    /// `∫₀¹ |g(c) − c| dc`, the largest calibration error any derivate can reach.
    pub fn max_calibration_error(self) -> f64 {
        simpson(|c| (self.eval(c) - c).abs(), 0.0, 1.0, CE_INTEGRAL_INTERVALS)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Shape {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.tag() == s)
            .ok_or_else(|| CalibError::domain(format!("unknown shape `{s}` (expected square|sqrt|beta1|beta2|stairs)")))
    }
}

fn beta_shape(x: f64, a: f64, b: f64, c: f64) -> f64 {
    // 1 / (1 + 1 / (e^c x^a / (1-x)^b)) written as a logistic of the log-odds.
    sigmoid(c + a * x.ln() - b * (1.0 - x).ln())
}

fn step(x: f64) -> f64 {
    x - x.sin()
}

fn stairs_helper(x: f64) -> f64 {
    step(step(3.0 * x * PI)) / (3.0 * PI)
}

/// A base shape mixed with the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivate {
    pub shape: Shape,
    pub lambda: f64,
}

impl Derivate {
    pub fn new(shape: Shape, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(CalibError::domain(format!("mixing weight must be in [0,1], got {lambda}")));
        }
        Ok(Self { shape, lambda })
    }

    /// `m(c)`, the prediction for calibrated probability `c`.
    pub fn forward(&self, c: f64) -> f64 {
        if c <= 0.0 {
            return 0.0;
        }
        if c >= 1.0 {
            return 1.0;
        }
        ((1.0 - self.lambda) * c + self.lambda * self.shape.eval(c)).clamp(0.0, 1.0)
    }

    /// `m⁻¹(p)` by bisection, run until the bracket stops shrinking.
    pub fn inverse(&self, p: f64) -> f64 {
        if self.lambda == 0.0 {
            return p.clamp(0.0, 1.0);
        }
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.forward(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `∫₀¹ |m(c) − c| dc` by composite Simpson.
    pub fn calibration_error(&self) -> f64 {
        simpson(|c| (self.forward(c) - c).abs(), 0.0, 1.0, CE_INTEGRAL_INTERVALS)
    }
}

/// Relative slack when a target sits exactly at the shape's maximum.
const MIXING_SLACK: f64 = 1e-6;

/// Mixing weight whose derivate has expected absolute calibration error
/// `target_ce` under uniform calibrated probabilities.
pub fn solve_mixing(shape: Shape, target_ce: f64) -> Result<f64> {
    if !(target_ce >= 0.0) {
        return Err(CalibError::domain(format!("target calibration error must be nonnegative, got {target_ce}")));
    }
    if target_ce == 0.0 {
        return Ok(0.0);
    }
    let max = shape.max_calibration_error();
    let lambda = target_ce / max;
    if lambda > 1.0 + MIXING_SLACK {
        return Err(CalibError::domain(format!(
            "target calibration error {target_ce} unreachable for `{shape}` (maximum {max})"
        )));
    }
    Ok(lambda.min(1.0))
}

/// A generated dataset with its exact ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: BinaryDataset,
    pub ground_truth: GroundTruthMap,
    /// The hidden calibrated probabilities, `c*(p̂_i)`.
    pub calibrated: Vec<f64>,
}

/// Draws `n` instances. The calibrated values and labels depend only on `seed`.
pub fn generate_dataset(shape: Shape, lambda: f64, n: usize, seed: u64) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(CalibError::domain("n must be at least 1"));
    }
    let derivate = Derivate::new(shape, lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut calibrated = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c: f64 = rng.gen();
        let u: f64 = rng.gen();
        calibrated.push(c);
        labels.push(u8::from(u < c));
    }
    let predictions = calibrated.iter().map(|&c| derivate.forward(c)).collect();
    Ok(SyntheticDataset {
        dataset: BinaryDataset::new(predictions, labels)?,
        ground_truth: GroundTruthMap::Analytic(derivate),
        calibrated,
    })
}

impl SyntheticDataset {
    /// Writes `p_hat,label,c_star` rows with round-trip float formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "p_hat,label,c_star")?;
        for ((p, y), c) in self.dataset.predictions().iter().zip(self.dataset.labels()).zip(&self.calibrated) {
            writeln!(out, "{p:?},{y},{c:?}")?;
        }
        Ok(())
    }
}
