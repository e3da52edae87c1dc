//! Adam with bias correction and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::tensor::{s, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments for a parameter of the given shape, default betas.
    pub fn new(shape: &[usize]) -> Self {
        Self::with_hyper(shape, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(shape: &[usize], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            step: 0,
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One Adam update of `param` in place.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(dim_err!(
            "adam shapes disagree: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        ));
    }
    if !(lr > 0.0) {
        return Err(param_err!("learning rate must be positive, got {lr}"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2): (T, T) = (s(state.beta1), s(state.beta2));
    let one = T::one();
    let c1: T = s(1.0 / (1.0 - state.beta1.powi(t)));
    let c2: T = s(1.0 / (1.0 - state.beta2.powi(t)));
    let lr: T = s(lr);
    let eps: T = s(state.epsilon);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m * c1;
        let v_hat = *v * c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub gamma: f64,
    pub period_epochs: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-5,
            gamma: 0.9,
            period_epochs: 50,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(param_err!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(param_err!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.period_epochs == 0 {
            return Err(param_err!("period_epochs must be positive"));
        }
        Ok(())
    }

    /// `base_lr · gamma^floor(epoch / period_epochs)`.
    pub fn lr_at_epoch(&self, epoch: u32) -> f64 {
        self.base_lr * self.gamma.powi((epoch / self.period_epochs) as i32)
    }
}
