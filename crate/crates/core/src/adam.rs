//! Adam with bias correction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], step: 0 }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }
}

/// One Adam update of `params` in place.
///
/// # Panics
/// If `params`, `gradient` and the state differ in length.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], gradient: &[f64], config: &AdamConfig) {
    assert_eq!(params.len(), state.m.len(), "Adam state dimension mismatch");
    assert_eq!(gradient.len(), state.m.len(), "gradient dimension mismatch");
    state.step += 1;
    let bc1 = 1.0 - config.beta1.powi(state.step);
    let bc2 = 1.0 - config.beta2.powi(state.step);
    for i in 0..params.len() {
        let g = gradient[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}
