//! Adaptive-moment optimizer with decoupled weight decay.
//!
//! First and second moment estimates with bias correction
//! (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`); the decay is applied
//! multiplicatively to the weights, separate from the gradient step:
//!
//! ```text
//! w <- w (1 - lr * weight_decay) - lr * m_hat / (sqrt(v_hat) + eps)
//! ```

use crate::model::{ModelDims, ModelWeights};

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamParams {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamParams {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates, stored in weight-shaped containers so they stay
/// aligned with the parameter arrays.
pub struct AdamState {
    m: ModelWeights,
    v: ModelWeights,
    step: u64,
}

impl AdamState {
    pub fn new(dims: &ModelDims) -> Self {
        AdamState {
            m: ModelWeights::zeros(dims),
            v: ModelWeights::zeros(dims),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradients contained a NaN or infinity; weights are untouched.
    RejectedNonFinite,
}

pub fn optimizer_step(
    weights: &mut ModelWeights,
    grads: &ModelWeights,
    state: &mut AdamState,
    params: &AdamParams,
) -> StepOutcome {
    if !grads.is_finite() {
        return StepOutcome::RejectedNonFinite;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - params.beta1.powi(t);
    let bc2 = 1.0 - params.beta2.powi(t);
    let decay = 1.0 - params.lr * params.weight_decay;

    let ws = weights.arrays_mut();
    let gs = grads.arrays();
    let ms = state.m.arrays_mut();
    let vs = state.v.arrays_mut();
    for (((w, g), m), v) in ws.into_iter().zip(gs).zip(ms).zip(vs) {
        debug_assert_eq!(w.1.shape(), g.1.shape(), "{}", w.0);
        let wd = w.1.data_mut();
        let md = m.1.data_mut();
        let vd = v.1.data_mut();
        for i in 0..wd.len() {
            let grad = g.1.data()[i];
            md[i] = params.beta1 * md[i] + (1.0 - params.beta1) * grad;
            vd[i] = params.beta2 * vd[i] + (1.0 - params.beta2) * grad * grad;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            wd[i] = wd[i] * decay - params.lr * m_hat / (v_hat.sqrt() + params.epsilon);
        }
    }
    StepOutcome::Applied
}
