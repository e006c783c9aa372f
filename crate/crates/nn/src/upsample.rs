//! Nearest 2× upsampling inside the network and bilinear resizing for the
//! output lift.

use crate::error::{shape_err, Error, Result};
use crate::layer::{Layer, Mode};
use crate::{Scalar, Tensor};

/// Each input pixel becomes a 2×2 block.
pub fn upsample2x_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for y in 0..oh {
            let row = &plane[(y / 2) * w..(y / 2 + 1) * w];
            for x in 0..ow {
                out.push(row[x / 2]);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

/// Sums each 2×2 block of the gradient.
pub fn upsample2x_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = grad_out.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return shape_err(format!("odd gradient size {oh}x{ow} for 2x upsampling"));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut out = vec![T::zero(); n * c * h * w];
    for (plane, dst) in grad_out.data().chunks(oh * ow).zip(out.chunks_mut(h * w)) {
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / 2) * w + x / 2] += plane[y * ow + x];
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

#[derive(Debug, Clone, Default)]
pub struct Upsample2x {
    cached: bool,
}

impl Upsample2x {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Upsample2x {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.cached = true;
        upsample2x_forward(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if !std::mem::take(&mut self.cached) {
            return Err(Error::MissingCache);
        }
        upsample2x_backward(grad_out)
    }

    fn clear_cache(&mut self) {
        self.cached = false;
    }
}

/// Half-pixel-centered source sample, clamped at the borders
/// (`align_corners = false`).
fn source(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, src - i0 as f64)
}

/// Resizes every plane of `[N, C, H, W]` to `out_h × out_w`.
pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return shape_err("empty bilinear target");
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let cols: Vec<_> = (0..out_w).map(|ox| source(ox, w, out_w)).collect();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.data().chunks(h * w) {
        for oy in 0..out_h {
            let (y0, y1, fy) = source(oy, h, out_h);
            for &(x0, x1, fx) in &cols {
                let p = |yy: usize, xx: usize| plane[yy * w + xx].as_f64();
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(T::of(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}
