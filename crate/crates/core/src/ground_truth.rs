use serde::{Deserialize, Serialize};

use crate::binning::{TiltedMap, LAST_EDGE};
use crate::error::{CalibError, Result};
use crate::map::CalibrationMap;
use crate::synth::Derivate;

/// An evaluable true calibration map `c*`.
///
/// Exact for synthetic data (`Analytic`), estimated from a holdout set
/// otherwise. Every variant returns values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthMap {
    Identity,
    /// Inverse of a synthetic derivate.
    Analytic(Derivate),
    /// Flat steps: `values[k]` on `[boundaries[k], boundaries[k + 1])`.
    Stepwise { boundaries: Vec<f64>, values: Vec<f64> },
    /// Slope-one bin tops, clamped into `[0, 1]`.
    Tilted(TiltedMap),
}

impl GroundTruthMap {
    pub fn stepwise(boundaries: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if boundaries.len() != values.len() + 1 || values.is_empty() {
            return Err(CalibError::domain(format!(
                "stepwise map needs one more boundary than values ({} vs {})",
                boundaries.len(),
                values.len()
            )));
        }
        if boundaries[0] != 0.0 || *boundaries.last().unwrap() <= 1.0 {
            return Err(CalibError::domain("stepwise boundaries must start at 0 and end above 1"));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CalibError::domain("stepwise boundaries must be strictly increasing"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CalibError::domain("stepwise values must lie in [0,1]"));
        }
        Ok(GroundTruthMap::Stepwise { boundaries, values })
    }

    /// Step function taking `levels[k]` from `thresholds[k]` up to the next threshold.
    /// Inputs below the first threshold take the first level.
    pub fn from_steps(thresholds: &[f64], levels: &[f64]) -> Result<Self> {
        if thresholds.is_empty() || thresholds.len() != levels.len() {
            return Err(CalibError::domain("step thresholds and levels must be non-empty and equally long"));
        }
        let mut boundaries = Vec::with_capacity(thresholds.len() + 1);
        boundaries.push(0.0);
        boundaries.extend_from_slice(&thresholds[1..]);
        boundaries.push(LAST_EDGE);
        Self::stepwise(boundaries, levels.to_vec())
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            GroundTruthMap::Identity => p.clamp(0.0, 1.0),
            GroundTruthMap::Analytic(derivate) => derivate.inverse(p),
            GroundTruthMap::Stepwise { boundaries, values } => {
                let k = boundaries.partition_point(|&b| b <= p).saturating_sub(1);
                values[k.min(values.len() - 1)]
            }
            GroundTruthMap::Tilted(map) => map.apply(p).clamp(0.0, 1.0),
        }
    }
}

impl CalibrationMap for GroundTruthMap {
    fn apply(&self, p: f64) -> f64 {
        self.eval(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Shape;

    #[test]
    fn identity_and_analytic() {
        assert_eq!(GroundTruthMap::Identity.eval(0.3), 0.3);
        let gt = GroundTruthMap::Analytic(Derivate::new(Shape::Square, 0.0).unwrap());
        assert_eq!(gt.eval(0.3), 0.3);
        let gt = GroundTruthMap::Analytic(Derivate::new(Shape::Square, 1.0).unwrap());
        assert!((gt.eval(0.25) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stepwise_lookup() {
        let gt = GroundTruthMap::stepwise(vec![0.0, 0.5, LAST_EDGE], vec![0.2, 0.9]).unwrap();
        assert_eq!(gt.eval(0.0), 0.2);
        assert_eq!(gt.eval(0.49), 0.2);
        assert_eq!(gt.eval(0.5), 0.9);
        assert_eq!(gt.eval(1.0), 0.9);
    }

    #[test]
    fn stepwise_validation() {
        assert!(GroundTruthMap::stepwise(vec![0.0, 1.0], vec![0.5]).is_err());
        assert!(GroundTruthMap::stepwise(vec![0.0, 0.5, 0.5, 2.0], vec![0.1, 0.2, 0.3]).is_err());
        assert!(GroundTruthMap::stepwise(vec![0.0, 2.0], vec![1.5]).is_err());
    }

    #[test]
    fn from_steps_clamps_below_first_threshold() {
        let gt = GroundTruthMap::from_steps(&[0.2, 0.6], &[0.1, 0.7]).unwrap();
        assert_eq!(gt.eval(0.05), 0.1);
        assert_eq!(gt.eval(0.59), 0.1);
        assert_eq!(gt.eval(0.6), 0.7);
        assert_eq!(gt.eval(1.0), 0.7);
    }
}
