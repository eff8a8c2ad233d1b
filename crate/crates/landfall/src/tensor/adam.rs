//! Adam optimizer with bias-corrected moment estimates.

use super::{Tensor, TensorError};

/// Hyperparameters. The defaults are the usual lr 0.001, beta1 0.9,
/// beta2 0.999, epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            ..Default::default()
        }
    }
}

/// First and second moment buffers, one pair per parameter tensor, plus the
/// step counter. Moments start at zero.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }

    /// One update over all parameters, reading each tensor's gradient buffer.
    /// Gradients are left untouched; zeroing them between steps is the
    /// caller's job. A parameter without a gradient buffer is an error.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        hp: &AdamParams,
    ) -> Result<(), TensorError> {
        if params.len() != self.m.len() {
            return Err(TensorError::OptimizerArity {
                state: self.m.len(),
                got: params.len(),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        for (index, param) in params.iter_mut().enumerate() {
            if param.numel() != self.m[index].len() {
                return Err(TensorError::OptimizerShape {
                    index,
                    state: self.m[index].len(),
                    got: param.numel(),
                });
            }
            let Some(grad) = param.grad() else {
                return Err(TensorError::Invalid {
                    op: "adam_step",
                    msg: format!("parameter {index} has no gradient buffer"),
                });
            };
            let grad = grad.to_vec();
            let m = &mut self.m[index];
            let v = &mut self.v[index];
            let data = param.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
        Ok(())
    }
}
