use serde::{Deserialize, Serialize};

use super::paramvec::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(n: usize, config: AdamWConfig) -> Self {
        Self { config, first_moment: vec![0.0; n], second_moment: vec![0.0; n], step_count: 0 }
    }
}

/// One AdamW step. Weight decay is applied multiplicatively before the
/// bias-corrected Adam update.
pub fn adamw_step(
    params: &ParamVector,
    grads: &ParamVector,
    state: &mut OptimizerState,
) -> Result<ParamVector> {
    params.check_len(grads)?;
    if state.first_moment.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            got: state.first_moment.len(),
        });
    }
    if !grads.is_finite() {
        return Err(Error::NumericOverflow);
    }
    let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let decay = 1.0 - lr * weight_decay;

    let mut out = params.clone();
    for (i, theta) in out.values.iter_mut().enumerate() {
        let g = grads.values[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *theta = *theta * decay - lr * m_hat / (v_hat.sqrt() + eps);
    }
    if !out.is_finite() {
        return Err(Error::NumericOverflow);
    }
    Ok(out)
}

/// Plain gradient descent, `θ ← θ − lr·g`.
pub fn sgd_step(params: &ParamVector, grads: &ParamVector, lr: f64) -> Result<ParamVector> {
    params.check_len(grads)?;
    if !grads.is_finite() {
        return Err(Error::NumericOverflow);
    }
    let mut out = params.clone();
    out.add_scaled(grads, -lr)?;
    Ok(out)
}
