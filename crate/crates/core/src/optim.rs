//! Adam optimizer and the linear learning-rate decay schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Linearly decaying learning rate: `lr(step) = base_lr * (1 - step/total_steps)`,
/// clamped at zero. `lr(0) = base_lr` and `lr(total_steps) = 0` exactly.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Parameter {
                name: "total_steps",
                message: "must be positive".into(),
            });
        }
        Ok(LrSchedule { base_lr, total_steps })
    }

    pub fn lr(&self, step: usize) -> f64 {
        let frac = 1.0 - step as f64 / self.total_steps as f64;
        self.base_lr * frac.max(0.0)
    }
}

/// One parameter as seen by the optimizer.
pub struct AdamParam<'a, S: Scalar> {
    pub name: &'a str,
    pub tensor: &'a Tensor<S>,
    pub frozen: bool,
}

/// Adam moment buffers and step counter.
///
/// Moment buffers are allocated on the first step and stay congruent with
/// the parameter list, which must be passed in the same order every step.
pub struct AdamState<S: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    /// Canonical Adam constants: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new() -> Self {
        Self::with_constants(0.9, 0.999, 1e-8)
    }

    pub fn with_constants(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

impl<S: Scalar> Default for AdamState<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// One bias-corrected Adam update over `params`.
///
/// Frozen parameters are not touched (their data stays bit-identical and
/// their moments never move); a missing gradient on an unfrozen parameter
/// is an error.
pub fn adam_step<S: Scalar>(params: &[AdamParam<'_, S>], state: &mut AdamState<S>, lr: S) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![S::zero(); p.tensor.numel()]).collect();
        state.v = params.iter().map(|p| vec![S::zero(); p.tensor.numel()]).collect();
    }
    if state.m.len() != params.len() {
        return Err(Error::Internal(format!(
            "adam state tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let beta1 = S::cast(state.beta1);
    let beta2 = S::cast(state.beta2);
    let eps = S::cast(state.eps);
    let bias1 = S::one() - S::cast(state.beta1.powi(t));
    let bias2 = S::one() - S::cast(state.beta2.powi(t));

    for (idx, p) in params.iter().enumerate() {
        if p.frozen {
            continue;
        }
        let grad = p
            .tensor
            .grad_vec()
            .ok_or_else(|| Error::MissingGradient(p.name.to_string()))?;
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        if m.len() != grad.len() {
            return Err(Error::Internal(format!(
                "adam moment buffer for '{}' has {} elements, parameter has {}",
                p.name,
                m.len(),
                grad.len()
            )));
        }
        p.tensor.map_data_in_place(|w| {
            for i in 0..w.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (S::one() - beta1) * g;
                v[i] = beta2 * v[i] + (S::one() - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
    Ok(())
}
