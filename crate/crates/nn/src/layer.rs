//! Layer plumbing shared by the stateful wrappers.

use crate::{Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }
}

/// A layer that caches what it needs during `forward` so that `backward`
/// can return the input gradient and accumulate parameter gradients.
pub trait Layer<T: Scalar> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Fails with [`crate::Error::MissingCache`] unless a train or eval
    /// forward ran since the last backward.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    /// Trainable parameters with short local names (`weight`, `bias`,
    /// `gamma`, `beta`).
    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        Vec::new()
    }

    /// Non-trainable state that must be persisted (batch norm running
    /// statistics).
    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }

    fn clear_cache(&mut self) {}
}
