//! ADAM with bias correction.

use super::model::{Gradients, HeadModel};
use crate::{Error, Result};

/// First and second moments per parameter tensor, in model tensor order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn zeros_like(tensors: &[&[f64]]) -> Self {
        Self {
            step: 0,
            first: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            second: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }
}

/// One update: `m = b1 m + (1 - b1) g`, `v = b2 v + (1 - b2) g^2`,
/// `w -= lr * m_hat / (sqrt(v_hat) + eps)` with `t` incremented before bias correction.
pub fn adam_step(
    model: &mut HeadModel,
    grads: &Gradients,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut adam = std::mem::take(&mut model.adam);
    let params = model.tensors_mut();
    if grad_tensors.len() != params.len()
        || adam.first.len() != params.len()
        || grad_tensors.iter().zip(&params).any(|(g, p)| g.len() != p.len())
    {
        model.adam = adam;
        return Err(Error::Invariant("gradient shapes do not match the model".into()));
    }
    adam.step += 1;
    let t = adam.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    for (((w, g), m), v) in params
        .into_iter()
        .zip(grad_tensors)
        .zip(adam.first.iter_mut())
        .zip(adam.second.iter_mut())
    {
        for i in 0..w.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    model.adam = adam;
    Ok(())
}
