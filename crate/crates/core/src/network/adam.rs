use serde::{Deserialize, Serialize};

use super::NetworkParams;
use crate::error::{Error, Result};

/// Bias-corrected Adam state mirroring the layout of [`NetworkParams::tensors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn matches(&self, params: &NetworkParams) -> bool {
        let t = params.tensors();
        t.len() == self.m.len()
            && t.len() == self.v.len()
            && t.iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| p.len() == m.len() && p.len() == v.len())
    }
}

/// One Adam update. Parameters are left untouched if any gradient is non-finite.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut AdamState,
) -> Result<()> {
    if !state.matches(params) || grads.tensors().len() != state.m.len() {
        return Err(Error::Internal(
            "adam: state/gradient shape mismatch".into(),
        ));
    }
    let g_all = grads.tensors();
    for (t, g) in g_all.iter().enumerate() {
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient tensor {t} entry {i} is {}",
                g[i]
            )));
        }
    }
    state.step += 1;
    let step = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(step);
    let bc2 = 1.0 - state.beta2.powi(step);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g_all)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
