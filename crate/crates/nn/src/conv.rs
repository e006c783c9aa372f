//! 2-d convolution via im2col and matrix multiplication.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::init::he_normal;
use crate::layer::{Layer, Mode, Param};
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// "Same" padding, `dilation * (kernel - 1) / 2`.
    pub fn same(kernel: usize, stride: usize, dilation: usize) -> Self {
        Self { kernel, stride, dilation, pad: dilation * (kernel - 1) / 2 }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::Invalid(format!("degenerate convolution {self:?}")));
        }
        Ok(())
    }

    /// `floor((n + 2 pad - dilation (kernel - 1) - 1) / stride) + 1`, or
    /// `None` if the dilated kernel does not fit.
    pub fn output_size(&self, n: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = n + 2 * self.pad;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (self.output_size(h), self.output_size(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => shape_err(format!("{h}x{w} input too small for {self:?}")),
        }
    }
}

/// Source row/column for kernel tap `k` at output position `o`, if it lands
/// inside the input.
#[inline]
fn tap(o: usize, k: usize, g: &ConvGeometry, n: usize) -> Option<usize> {
    let pos = (o * g.stride + k * g.dilation) as isize - g.pad as isize;
    (pos >= 0 && (pos as usize) < n).then_some(pos as usize)
}

/// Unfolds one image `[C, H, W]` into `[C·K·K, OH·OW]`.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, col: &mut [T]) {
    let k = g.kernel;
    let cols = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[((ci * k + ki) * k + kj) * cols..][..cols];
                for oy in 0..oh {
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    match tap(oy, ki, g, h) {
                        None => out.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * w..(iy + 1) * w];
                            for (ox, o) in out.iter_mut().enumerate() {
                                *o = tap(ox, kj, g, w).map_or(T::zero(), |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[C·K·K, OH·OW]` back onto `[C, H, W]`.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, x: &mut [T]) {
    let k = g.kernel;
    let cols = oh * ow;
    x.fill(T::zero());
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[((ci * k + ki) * k + kj) * cols..][..cols];
                for oy in 0..oh {
                    let Some(iy) = tap(oy, ki, g, h) else { continue };
                    for ox in 0..ow {
                        if let Some(ix) = tap(ox, kj, g, w) {
                            plane[iy * w + ix] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_weight<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, g: &ConvGeometry) -> Result<[usize; 4]> {
    g.validate()?;
    let [_, cin, _, _] = x.dims4()?;
    let [cout, wc, kh, kw] = weight.dims4()?;
    if wc != cin || kh != g.kernel || kw != g.kernel {
        return shape_err(format!(
            "weight {:?} does not fit input {:?} with kernel {}",
            weight.shape(),
            x.shape(),
            g.kernel
        ));
    }
    if bias.shape() != [cout] {
        return shape_err(format!("bias {:?} for {cout} output channels", bias.shape()));
    }
    x.dims4()
}

fn is_pointwise(g: &ConvGeometry) -> bool {
    g.kernel == 1 && g.stride == 1 && g.pad == 0
}

/// `weight` is `[Cout, Cin, K, K]`, `bias` is `[Cout]`.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, g: &ConvGeometry) -> Result<Tensor<T>> {
    let [n, cin, h, w] = check_weight(x, weight, bias, g)?;
    let cout = weight.shape()[0];
    let (oh, ow) = g.output_dims(h, w)?;
    let ckk = cin * g.kernel * g.kernel;
    let cols = oh * ow;
    let mut out = vec![T::zero(); n * cout * cols];
    let mut col = if is_pointwise(g) { Vec::new() } else { vec![T::zero(); ckk * cols] };
    for b in 0..n {
        let xb = &x.data()[b * cin * h * w..(b + 1) * cin * h * w];
        let ob = &mut out[b * cout * cols..(b + 1) * cout * cols];
        for (co, chunk) in ob.chunks_mut(cols).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        let src: &[T] = if is_pointwise(g) {
            xb
        } else {
            im2col(xb, cin, h, w, g, oh, ow, &mut col);
            &col
        };
        T::gemm(cout, ckk, cols, T::one(), weight.data(), ckk, 1, src, cols, 1, T::one(), ob, cols);
    }
    Tensor::new(&[n, cout, oh, ow], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d_forward`] with respect to its three inputs. The
/// unfolded input is recomputed rather than cached.
pub fn conv2d_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>, weight: &Tensor<T>, g: &ConvGeometry) -> Result<ConvGrads<T>> {
    let cout = weight.dims4()?[0];
    let bias_shape = Tensor::zeros(&[cout])?;
    let [n, cin, h, w] = check_weight(x, weight, &bias_shape, g)?;
    let (oh, ow) = g.output_dims(h, w)?;
    if grad_out.shape() != [n, cout, oh, ow] {
        return shape_err(format!("grad_out {:?}, expected {:?}", grad_out.shape(), [n, cout, oh, ow]));
    }
    let ckk = cin * g.kernel * g.kernel;
    let cols = oh * ow;
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); cout];
    let pointwise = is_pointwise(g);
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); ckk * cols] };
    let mut gcol = if pointwise { Vec::new() } else { vec![T::zero(); ckk * cols] };
    for b in 0..n {
        let xb = &x.data()[b * cin * h * w..(b + 1) * cin * h * w];
        let gob = &grad_out.data()[b * cout * cols..(b + 1) * cout * cols];
        for (co, chunk) in gob.chunks(cols).enumerate() {
            gb[co] += chunk.iter().copied().sum::<T>();
        }
        let src: &[T] = if pointwise {
            xb
        } else {
            im2col(xb, cin, h, w, g, oh, ow, &mut col);
            &col
        };
        // dW += dY · colᵀ
        T::gemm(cout, cols, ckk, T::one(), gob, cols, 1, src, 1, cols, T::one(), &mut gw, ckk);
        // dcol = Wᵀ · dY
        let gxb = &mut gx[b * cin * h * w..(b + 1) * cin * h * w];
        if pointwise {
            T::gemm(ckk, cout, cols, T::one(), weight.data(), 1, ckk, gob, cols, 1, T::zero(), gxb, cols);
        } else {
            T::gemm(ckk, cout, cols, T::one(), weight.data(), 1, ckk, gob, cols, 1, T::zero(), &mut gcol, cols);
            col2im(&gcol, cin, h, w, g, oh, ow, gxb);
        }
    }
    Ok(ConvGrads {
        x: Tensor::new(x.shape(), gx)?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: Tensor::new(&[cout], gb)?,
    })
}

/// Convolution layer owning its weight and bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar = f32> {
    pub geometry: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal weights, zero bias.
    pub fn new(cin: usize, cout: usize, geometry: ConvGeometry, rng: &mut impl Rng) -> Result<Self> {
        geometry.validate()?;
        let k = geometry.kernel;
        let weight = he_normal(&[cout, cin, k, k], cin * k * k, rng)?;
        Ok(Self::from_parts(geometry, weight, Tensor::zeros(&[cout])?))
    }

    pub fn from_parts(geometry: ConvGeometry, weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self { geometry, weight: Param::new(weight), bias: Param::new(bias), cache: None }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = conv2d_forward(x, &self.weight.value, &self.bias.value, &self.geometry)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::MissingCache)?;
        let g = conv2d_backward(grad_out, &x, &self.weight.value, &self.geometry)?;
        self.weight.grad.add_assign(&g.weight)?;
        self.bias.grad.add_assign(&g.bias)?;
        Ok(g.x)
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}
