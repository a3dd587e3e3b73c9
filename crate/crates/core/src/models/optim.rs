//! Gradients, Adam and the momentum (key-encoder) update.

use serde::{Deserialize, Serialize};

use super::params::{to_f32_precision, ParamSet};
use crate::error::{Error, Result};

/// A scalar loss over a parameter set with exact reverse-mode gradients.
pub trait Objective {
    fn loss(&self, params: &ParamSet) -> Result<f64>;
    fn loss_and_grad(&self, params: &ParamSet) -> Result<(f64, ParamSet)>;
}

/// Gradient of `objective` at `params`. Fails on a non-finite loss or gradient.
pub fn gradient(params: &ParamSet, objective: &dyn Objective) -> Result<ParamSet> {
    let (loss, grad) = objective.loss_and_grad(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    params.check_same_layout(&grad)?;
    Ok(grad)
}

/// Central difference `(L(p + h e) - L(p - h e)) / 2h` along flat coordinate `flat`.
pub fn central_difference(
    objective: &dyn Objective,
    params: &ParamSet,
    flat: usize,
    h: f64,
) -> Result<f64> {
    let (name, idx) = params
        .flat_get(flat)
        .ok_or_else(|| Error::ShapeMismatch(format!("coordinate {flat} out of range")))?;
    let name = name.to_string();
    let mut q = params.clone();
    let base = q.get(&name).expect("known tensor").data[idx];
    q.get_mut(&name).expect("known tensor").data[idx] = base + h;
    let up = objective.loss(&q)?;
    q.get_mut(&name).expect("known tensor").data[idx] = base - h;
    let down = objective.loss(&q)?;
    Ok((up - down) / (2.0 * h))
}

/// Relative gradient error `|a - b| / max(|a|, |b|, floor)`. The floor keeps
/// coordinates whose true gradient is at the finite-difference noise level
/// from dominating the comparison.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// `theta_k <- mu * theta_k + (1 - mu) * theta_q`.
pub fn momentum_update(key: &ParamSet, query: &ParamSet, mu: f64) -> Result<ParamSet> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidConfig(format!(
            "momentum {mu} outside [0, 1]"
        )));
    }
    key.check_same_layout(query)?;
    let mut out = key.clone();
    for ((_, k), (_, q)) in out.iter_mut().zip(query.iter()) {
        for (a, b) in k.data.iter_mut().zip(&q.data) {
            *a = mu * *a + (1.0 - mu) * b;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Bias-corrected Adam update applied in place. Updated parameters are
    /// rounded to single precision.
    pub fn update(&mut self, params: &mut ParamSet, grad: &ParamSet) -> Result<()> {
        params.check_same_layout(grad)?;
        params.check_same_layout(&self.m)?;
        if !grad.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let tensors = params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] = to_f32_precision(p.data[i] - lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step(
    params: &ParamSet,
    grad: &ParamSet,
    state: &AdamState,
) -> Result<(ParamSet, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.update(&mut p, grad)?;
    Ok((p, s))
}
