use serde::{Deserialize, Serialize};

use super::{Gradients, MlpParams, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Gradients,
    v: Gradients,
    step_count: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update. Refuses non-finite gradients so a bad
/// batch cannot silently poison the parameters.
pub fn adam_step(params: &mut MlpParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !grads.same_shape(params) || !state.m.same_shape(params) {
        return Err(TensorError::DimensionMismatch {
            what: "adam parameter count",
            expected: params.num_params(),
            actual: grads.slices().map(<[f64]>::len).sum(),
        });
    }
    if !grads.is_finite() {
        return Err(TensorError::NonFinite("gradient"));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let slices = params
        .param_slices_mut()
        .zip(grads.slices())
        .zip(state.m.slices_mut().zip(state.v.slices_mut()));
    for ((p, g), (m, v)) in slices {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
