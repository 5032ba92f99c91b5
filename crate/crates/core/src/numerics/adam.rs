//! Bias-corrected Adam.

use alloc::vec::Vec;

use super::fmath;
use super::param::Param;
use super::NumericsError;

/// Per-parameter optimizer state. Moments share the parameter's shape;
/// `step_count` increases by exactly one per update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        AdamState {
            first_moment: alloc::vec![0.0; len],
            second_moment: alloc::vec![0.0; len],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One in-place Adam update. The parameter must carry a gradient from a
/// backward pass; the gradient is consumed.
pub fn adam_step(param: &mut Param, state: &mut AdamState) -> Result<(), NumericsError> {
    let grad = param.grad.take().ok_or_else(|| NumericsError::MissingGrad {
        param: param.name.clone(),
    })?;
    debug_assert_eq!(grad.len(), param.values.len());
    debug_assert_eq!(state.first_moment.len(), param.values.len());

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - libm::pow(state.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(state.beta2, t as f64);

    for i in 0..param.values.len() {
        let g = grad[i];
        let m = &mut state.first_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        let v = &mut state.second_moment[i];
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        param.values[i] -= state.learning_rate * m_hat / (fmath::sqrt(v_hat) + state.epsilon);
    }
    Ok(())
}
