//! A deliberately small tensor engine: NCHW dense arrays, convolution with
//! stride and dilation, batch normalization, ReLU, nearest and bilinear
//! upsampling, the two colorization losses and ADAM.
//!
//! Every layer has an explicit backward pass; there is no autodiff graph.
//! All kernels are generic over [`Scalar`] so gradients can be checked in
//! double precision.

pub mod adam;
pub mod batchnorm;
pub mod conv;
mod error;
pub mod gradcheck;
pub mod init;
pub mod layer;
pub mod loss;
pub mod relu;
mod tensor;
pub mod upsample;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, ConvGeometry};
pub use error::{Error, Result};
pub use layer::{Layer, Mode, Param};
pub use relu::Relu;
pub use tensor::{Scalar, Tensor};
pub use upsample::Upsample2x;
