/// Anything that maps a predicted probability to a recalibrated value.
pub trait CalibrationMap {
    fn apply(&self, p: f64) -> f64;

    fn apply_all(&self, ps: &[f64]) -> Vec<f64> {
        ps.iter().map(|&p| self.apply(p)).collect()
    }
}

impl<F: Fn(f64) -> f64> CalibrationMap for F {
    fn apply(&self, p: f64) -> f64 {
        self(p)
    }
}

/// The identity map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Identity;

impl CalibrationMap for Identity {
    fn apply(&self, p: f64) -> f64 {
        p
    }
}
