use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result, Scalar, Tensor};

/// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::Invalid("fan_in must be positive".into()));
    }
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::Invalid(e.to_string()))?;
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}
