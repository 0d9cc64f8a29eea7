//! First-order optimizers over a [`ParameterSet`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grad::{GradientSet, ParameterSet, TensorSet};

fn check_shapes(params: &ParameterSet, grads: &GradientSet) -> Result<()> {
    if params.congruent(grads) {
        Ok(())
    } else {
        Err(invalid("gradient set does not match parameter layout"))
    }
}

/// `p <- p - lr * g` for every tensor.
pub fn sgd_step(params: &mut ParameterSet, grads: &GradientSet, lr: f64) -> Result<()> {
    // Written negated so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(lr > 0.0) {
        return Err(invalid(format!("learning rate must be positive, got {lr}")));
    }
    check_shapes(params, grads)?;
    for (p, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        for (x, d) in p.data.iter_mut().zip(&g.data) {
            *x -= lr * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: TensorSet,
    pub second: TensorSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &GradientSet,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    check_shapes(params, grads)?;
    check_shapes(params, &state.first)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.first.tensors.iter_mut())
        .zip(state.second.tensors.iter_mut())
    {
        for i in 0..p.data.len() {
            let d = g.data[i];
            m.data[i] = config.beta1 * m.data[i] + (1.0 - config.beta1) * d;
            v.data[i] = config.beta2 * v.data[i] + (1.0 - config.beta2) * d * d;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
