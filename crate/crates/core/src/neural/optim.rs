use alloc::vec;
use alloc::vec::Vec;

use super::params::{ModelParams, Optimizer};
use super::NeuralError;

/// First/second moment accumulators mirroring the parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn for_model(model: &ModelParams) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        OptimizerState {
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

fn same_shapes(a: &ModelParams, b: &ModelParams) -> bool {
    let (ta, tb) = (a.tensors(), b.tensors());
    ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| x.len() == y.len())
}

/// Bias-corrected Adam update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), NeuralError> {
    if !same_shapes(params, grads) {
        return Err(NeuralError::ShapeMismatch);
    }
    if state.m.is_empty() {
        *state = OptimizerState::for_model(params);
    }
    if state.m.len() != grads.tensors().len() {
        return Err(NeuralError::ShapeMismatch);
    }
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(beta1, t);
    let c2 = 1.0 - libm::pow(beta2, t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

/// Plain gradient descent: `p ← p − lr·g`.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<(), NeuralError> {
    if !same_shapes(params, grads) {
        return Err(NeuralError::ShapeMismatch);
    }
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (pk, gk) in p.iter_mut().zip(g) {
            *pk -= lr * gk;
        }
    }
    Ok(())
}

/// Applies whichever optimizer `opt` names.
pub fn apply_update(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    opt: &Optimizer,
) -> Result<(), NeuralError> {
    match *opt {
        Optimizer::Adam { lr, beta1, beta2, eps } => adam_step(params, grads, state, lr, beta1, beta2, eps),
        Optimizer::Sgd { lr } => {
            state.t += 1;
            sgd_step(params, grads, lr)
        }
    }
}
