//! Per-channel batch normalization over `[N, C, H, W]`.

use crate::error::{shape_err, Error, Result};
use crate::layer::{Layer, Mode, Param};
use crate::{Scalar, Tensor};

pub const EPS: f64 = 1e-5;
pub const MOMENTUM: f64 = 0.1;

/// What the backward pass needs from a training-mode forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache<T: Scalar> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<[usize; 4]> {
    let dims = x.dims4()?;
    if gamma.shape() != [dims[1]] || beta.shape() != [dims[1]] {
        return shape_err(format!("affine {:?}/{:?} for input {:?}", gamma.shape(), beta.shape(), x.shape()));
    }
    Ok(dims)
}

fn channel_indices(dims: [usize; 4], c: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let [n, cs, h, w] = dims;
    let hw = h * w;
    (0..n).map(move |b| (b * cs + c) * hw..(b * cs + c + 1) * hw)
}

/// Normalizes with batch statistics. Statistics are accumulated in `f64`.
pub fn batchnorm_forward_train<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let dims = check(x, gamma, beta)?;
    let [n, c, h, w] = dims;
    let m = (n * h * w) as f64;
    let mut y = x.zeros_like();
    let mut xhat = x.zeros_like();
    let (mut means, mut vars, mut inv_stds) = (Vec::with_capacity(c), Vec::with_capacity(c), Vec::with_capacity(c));
    for ch in 0..c {
        let mean = channel_indices(dims, ch).flat_map(|r| &x.data()[r]).map(|v| v.as_f64()).sum::<f64>() / m;
        let var = channel_indices(dims, ch)
            .flat_map(|r| &x.data()[r])
            .map(|v| (v.as_f64() - mean).powi(2))
            .sum::<f64>()
            / m;
        let inv_std = 1.0 / (var + eps).sqrt();
        let (g, b) = (gamma.data()[ch].as_f64(), beta.data()[ch].as_f64());
        for r in channel_indices(dims, ch) {
            for i in r {
                let xh = (x.data()[i].as_f64() - mean) * inv_std;
                xhat.data_mut()[i] = T::of(xh);
                y.data_mut()[i] = T::of(g * xh + b);
            }
        }
        means.push(T::of(mean));
        vars.push(T::of(var));
        inv_stds.push(T::of(inv_std));
    }
    Ok((y, BatchNormCache { xhat, inv_std: inv_stds, mean: means, var: vars }))
}

pub fn batchnorm_forward_eval<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, running_mean: &Tensor<T>, running_var: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let dims = check(x, gamma, beta)?;
    let c = dims[1];
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return shape_err("running statistics do not match channel count");
    }
    let mut y = x.zeros_like();
    for ch in 0..c {
        let inv_std = 1.0 / (running_var.data()[ch].as_f64() + eps).sqrt();
        let scale = gamma.data()[ch].as_f64() * inv_std;
        let shift = beta.data()[ch].as_f64() - running_mean.data()[ch].as_f64() * scale;
        for r in channel_indices(dims, ch) {
            for i in r {
                y.data_mut()[i] = T::of(x.data()[i].as_f64() * scale + shift);
            }
        }
    }
    Ok(y)
}

/// Returns `(grad_x, grad_gamma, grad_beta)` for a training-mode forward.
pub fn batchnorm_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &BatchNormCache<T>, gamma: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    grad_out.same_shape(&cache.xhat)?;
    let dims = grad_out.dims4()?;
    let [n, c, h, w] = dims;
    if gamma.shape() != [c] {
        return shape_err("gamma does not match channel count");
    }
    let m = (n * h * w) as f64;
    let mut gx = grad_out.zeros_like();
    let mut gg = Vec::with_capacity(c);
    let mut gb = Vec::with_capacity(c);
    for ch in 0..c {
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for r in channel_indices(dims, ch) {
            for i in r {
                let g = grad_out.data()[i].as_f64();
                sum_g += g;
                sum_gx += g * cache.xhat.data()[i].as_f64();
            }
        }
        gg.push(T::of(sum_gx));
        gb.push(T::of(sum_g));
        let k = gamma.data()[ch].as_f64() * cache.inv_std[ch].as_f64() / m;
        for r in channel_indices(dims, ch) {
            for i in r {
                let g = grad_out.data()[i].as_f64();
                let xh = cache.xhat.data()[i].as_f64();
                gx.data_mut()[i] = T::of(k * (m * g - sum_g - xh * sum_gx));
            }
        }
    }
    Ok((gx, Tensor::new(&[c], gg)?, Tensor::new(&[c], gb)?))
}

/// Batch norm with running statistics. Running variance uses the unbiased
/// batch estimate.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar = f32> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// 1 once a training step has populated the running statistics.
    pub initialized: Tensor<T>,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Param::new(Tensor::filled(&[channels], T::one())?),
            beta: Param::new(Tensor::zeros(&[channels])?),
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::filled(&[channels], T::one())?,
            initialized: Tensor::zeros(&[1])?,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized.data()[0] != T::zero()
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => {
                let (y, cache) = batchnorm_forward_train(x, &self.gamma.value, &self.beta.value, EPS)?;
                let [n, _, h, w] = x.dims4()?;
                let m = (n * h * w) as f64;
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                for ch in 0..self.channels() {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = T::of((1.0 - MOMENTUM) * rm.as_f64() + MOMENTUM * cache.mean[ch].as_f64());
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = T::of((1.0 - MOMENTUM) * rv.as_f64() + MOMENTUM * cache.var[ch].as_f64() * unbias);
                }
                self.initialized.data_mut()[0] = T::one();
                self.cache = Some(cache);
                Ok(y)
            }
            Mode::Eval => {
                if !self.is_initialized() {
                    return Err(Error::Uninitialized);
                }
                self.cache = None;
                batchnorm_forward_eval(x, &self.gamma.value, &self.beta.value, &self.running_mean, &self.running_var, EPS)
            }
        }
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::MissingCache)?;
        let (gx, gg, gb) = batchnorm_backward(grad_out, &cache, &self.gamma.value)?;
        self.gamma.grad.add_assign(&gg)?;
        self.beta.grad.add_assign(&gb)?;
        Ok(gx)
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
            ("initialized", &mut self.initialized),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}
