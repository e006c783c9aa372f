//! Central finite differences for checking backward passes in `f64`.

use crate::Tensor;

/// Step used by the gradient checks.
pub const STEP: f64 = 1e-4;

/// `∂f/∂x` by central differences, one coordinate at a time.
pub fn numeric_gradient(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = x.zeros_like();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over all coordinates, where
/// `floor` is 1e-6 of the largest analytic magnitude (and at least 1e-12).
/// The floor keeps coordinates whose true gradient is essentially zero from
/// dividing round-off by round-off.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let scale = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * scale).max(1e-12);
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `Σ r ⊙ y`; projecting an output onto fixed random weights turns any
/// tensor-valued map into a scalar for checking.
pub fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic() {
        let x = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let num = numeric_gradient(&x, STEP, |t| t.data().iter().map(|v| v.powi(3)).sum());
        let exact = x.map(|v| 3.0 * v * v);
        assert!(max_relative_error(&exact, &num) < 1e-7);
        assert!(max_relative_error(&exact.scale(1.01), &num) > 5e-3);
    }
}

/// Randomized finite-difference checks of every backward pass, shared by
/// the test suites. Each returns the max relative errors for one random
/// instance drawn from `seed`.
pub mod instances {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{max_relative_error, numeric_gradient, project, STEP};
    use crate::batchnorm::{batchnorm_backward, batchnorm_forward_train, EPS};
    use crate::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
    use crate::loss::{l2_loss, softmax_channels, weighted_softmax_xent};
    use crate::relu::{relu_backward, relu_forward};
    use crate::upsample::{upsample2x_backward, upsample2x_forward};
    use crate::Tensor;

    fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
    }

    /// `(grad_x, grad_w, grad_b)` errors on a 2×3×5×5 input; stride and
    /// dilation vary with the seed.
    pub fn conv(seed: u64) -> [f64; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stride = 1 + (seed % 2) as usize;
        let dilation = 1 + ((seed / 2) % 2) as usize;
        let g = ConvGeometry::same(3, stride, dilation);
        let x = uniform(&[2, 3, 5, 5], &mut rng, -1.0, 1.0);
        let w = uniform(&[4, 3, 3, 3], &mut rng, -1.0, 1.0);
        let b = uniform(&[4], &mut rng, -1.0, 1.0);
        let y = conv2d_forward(&x, &w, &b, &g).unwrap();
        let r = uniform(y.shape(), &mut rng, -1.0, 1.0);
        let a = conv2d_backward(&r, &x, &w, &g).unwrap();
        let nx = numeric_gradient(&x, STEP, |t| project(&conv2d_forward(t, &w, &b, &g).unwrap(), &r));
        let nw = numeric_gradient(&w, STEP, |t| project(&conv2d_forward(&x, t, &b, &g).unwrap(), &r));
        let nb = numeric_gradient(&b, STEP, |t| project(&conv2d_forward(&x, &w, t, &g).unwrap(), &r));
        [max_relative_error(&a.x, &nx), max_relative_error(&a.weight, &nw), max_relative_error(&a.bias, &nb)]
    }

    /// `(grad_x, grad_gamma, grad_beta)` errors for a training-mode forward.
    pub fn batchnorm(seed: u64) -> [f64; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&[3, 2, 3, 4], &mut rng, -2.0, 2.0);
        let gamma = uniform(&[2], &mut rng, 0.5, 1.5);
        let beta = uniform(&[2], &mut rng, -1.0, 1.0);
        let f = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| batchnorm_forward_train(x, g, b, EPS).unwrap();
        let (y, cache) = f(&x, &gamma, &beta);
        let r = uniform(y.shape(), &mut rng, -1.0, 1.0);
        let (gx, gg, gb) = batchnorm_backward(&r, &cache, &gamma).unwrap();
        let nx = numeric_gradient(&x, STEP, |t| project(&f(t, &gamma, &beta).0, &r));
        let ng = numeric_gradient(&gamma, STEP, |t| project(&f(&x, t, &beta).0, &r));
        let nb = numeric_gradient(&beta, STEP, |t| project(&f(&x, &gamma, t).0, &r));
        [max_relative_error(&gx, &nx), max_relative_error(&gg, &ng), max_relative_error(&gb, &nb)]
    }

    /// Inputs are kept at least 0.01 away from the kink so that the
    /// difference quotient never straddles it.
    pub fn relu(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[2, 3, 4, 4], |_| {
            let m: f64 = rng.random_range(0.01..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .unwrap();
        let r = uniform(x.shape(), &mut rng, -1.0, 1.0);
        let a = relu_backward(&r, &x).unwrap();
        let n = numeric_gradient(&x, STEP, |t| project(&relu_forward(t), &r));
        max_relative_error(&a, &n)
    }

    pub fn upsample(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&[2, 2, 3, 4], &mut rng, -1.0, 1.0);
        let r = uniform(&[2, 2, 6, 8], &mut rng, -1.0, 1.0);
        let a = upsample2x_backward(&r).unwrap();
        let n = numeric_gradient(&x, STEP, |t| project(&upsample2x_forward(t).unwrap(), &r));
        max_relative_error(&a, &n)
    }

    /// Soft targets and nonnegative weights drawn at random.
    pub fn xent(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = uniform(&[2, 7, 3, 2], &mut rng, -3.0, 3.0);
        let targets = softmax_channels(&uniform(z.shape(), &mut rng, -2.0, 2.0), 1.0).unwrap();
        let v = uniform(&[2, 1, 3, 2], &mut rng, 0.0, 3.0);
        let (_, a) = weighted_softmax_xent(&z, &targets, &v).unwrap();
        let n = numeric_gradient(&z, STEP, |t| weighted_softmax_xent(t, &targets, &v).unwrap().0);
        max_relative_error(&a, &n)
    }

    pub fn l2(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = uniform(&[2, 2, 3, 3], &mut rng, -50.0, 50.0);
        let t = uniform(p.shape(), &mut rng, -50.0, 50.0);
        let (_, a) = l2_loss(&p, &t).unwrap();
        let n = numeric_gradient(&p, STEP, |x| l2_loss(x, &t).unwrap().0);
        max_relative_error(&a, &n)
    }
}
