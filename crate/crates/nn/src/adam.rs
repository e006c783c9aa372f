//! Bias-corrected ADAM with L2 weight decay added to the gradient.

use crate::error::{shape_err, Result};
use crate::layer::Param;
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-5, beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Moments start at zero with the shapes of `params`.
    pub fn new(config: AdamConfig, params: &[&Param<T>]) -> Self {
        let m: Vec<_> = params.iter().map(|p| p.value.zeros_like()).collect();
        Self { config, step: 0, v: m.clone(), m }
    }

    /// One update using each parameter's accumulated gradient. The gradients
    /// are left in place.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return shape_err(format!("{} parameters for {} moment slots", params.len(), self.m.len()));
        }
        for (p, m) in params.iter().zip(&self.m) {
            p.value.same_shape(m)?;
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Param { value, grad } = &mut **p;
            for (((x, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g.as_f64() + c.weight_decay * x.as_f64();
                let mn = c.beta1 * mi.as_f64() + (1.0 - c.beta1) * g;
                let vn = c.beta2 * vi.as_f64() + (1.0 - c.beta2) * g * g;
                *mi = T::of(mn);
                *vi = T::of(vn);
                let update = c.lr * (mn / bc1) / ((vn / bc2).sqrt() + c.eps);
                *x = T::of(x.as_f64() - update);
            }
        }
        Ok(())
    }
}
