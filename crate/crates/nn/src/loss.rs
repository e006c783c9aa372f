//! Channel softmax, the weighted multinomial cross-entropy and the L2 loss.
//! Losses sum over pixels and average over the batch.

use crate::error::{shape_err, Result};
use crate::{Scalar, Tensor};

/// Softmax over the channel axis of `[N, C, H, W]`, optionally dividing the
/// logits by `temperature` first.
pub fn softmax_channels<T: Scalar>(logits: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
    let [n, c, h, w] = logits.dims4()?;
    if !(temperature > 0.0) {
        return Err(crate::Error::Invalid(format!("temperature {temperature} must be positive")));
    }
    let hw = h * w;
    let mut out = logits.zeros_like();
    let mut buf = vec![0.0f64; c];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut max = f64::NEG_INFINITY;
            for (q, slot) in buf.iter_mut().enumerate() {
                *slot = logits.data()[base + q * hw + p].as_f64() / temperature;
                max = max.max(*slot);
            }
            let mut sum = 0.0;
            for slot in buf.iter_mut() {
                *slot = (*slot - max).exp();
                sum += *slot;
            }
            for (q, &e) in buf.iter().enumerate() {
                out.data_mut()[base + q * hw + p] = T::of(e / sum);
            }
        }
    }
    Ok(out)
}

/// `targets` is `[N, Q, H, W]` with a distribution per pixel, `weights` is
/// `[N, 1, H, W]`. Returns the loss and its gradient with respect to the
/// logits.
pub fn weighted_softmax_xent<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>, weights: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let [n, q, h, w] = logits.dims4()?;
    logits.same_shape(targets)?;
    if weights.shape() != [n, 1, h, w] {
        return shape_err(format!("weights {:?} for logits {:?}", weights.shape(), logits.shape()));
    }
    let hw = h * w;
    let inv_n = 1.0 / n as f64;
    let mut grad = logits.zeros_like();
    let mut loss = 0.0f64;
    let mut ls = vec![0.0f64; q];
    for b in 0..n {
        let base = b * q * hw;
        for p in 0..hw {
            let v = weights.data()[b * hw + p].as_f64();
            let mut max = f64::NEG_INFINITY;
            for (k, slot) in ls.iter_mut().enumerate() {
                *slot = logits.data()[base + k * hw + p].as_f64();
                max = max.max(*slot);
            }
            let lse = max + ls.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            let mut pixel = 0.0;
            for (k, &z) in ls.iter().enumerate() {
                let idx = base + k * hw + p;
                let t = targets.data()[idx].as_f64();
                let log_p = z - lse;
                if t != 0.0 {
                    pixel -= t * log_p;
                }
                grad.data_mut()[idx] = T::of(v * (log_p.exp() - t) * inv_n);
            }
            loss += v * pixel;
        }
    }
    Ok((loss * inv_n, grad))
}

/// `½ Σ ‖pred − target‖²` per image, averaged over the batch.
pub fn l2_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.same_shape(target)?;
    let n = pred.shape()[0] as f64;
    let mut loss = 0.0f64;
    let mut grad = pred.zeros_like();
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p.as_f64() - t.as_f64();
        loss += 0.5 * d * d;
        *g = T::of(d / n);
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(n: usize, q: usize, h: usize, w: usize) -> Tensor<f64> {
        let hw = h * w;
        Tensor::from_fn(&[n, q, h, w], |i| {
            let (k, p) = ((i / hw) % q, i % hw);
            if k == (p * 7) % q { 1.0 } else { 0.0 }
        })
        .unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = Tensor::<f64>::from_fn(&[2, 5, 2, 3], |i| (i as f64 * 0.7).sin() * 30.0).unwrap();
        for t in [1.0, 0.38] {
            let p = softmax_channels(&z, t).unwrap();
            for b in 0..2 {
                for px in 0..6 {
                    let s: f64 = (0..5).map(|k| p.data()[b * 30 + k * 6 + px]).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
        assert!(softmax_channels(&z, 0.0).is_err());
    }

    #[test]
    fn uniform_logits_cost_log_q() {
        let (n, q, h, w) = (2, 13, 3, 2);
        let z = Tensor::<f64>::zeros(&[n, q, h, w]).unwrap();
        let v = Tensor::filled(&[n, 1, h, w], 1.0).unwrap();
        let (loss, _) = weighted_softmax_xent(&z, &onehot(n, q, h, w), &v).unwrap();
        assert!((loss - (h * w) as f64 * (q as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_zero_loss() {
        let z = Tensor::<f64>::from_fn(&[1, 4, 2, 2], |i| i as f64).unwrap();
        let v = Tensor::zeros(&[1, 1, 2, 2]).unwrap();
        let (loss, grad) = weighted_softmax_xent(&z, &onehot(1, 4, 2, 2), &v).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
        assert!(weighted_softmax_xent(&z, &onehot(1, 4, 2, 2), &Tensor::zeros(&[1, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn l2_three_four() {
        let gt = Tensor::<f64>::zeros(&[1, 2, 2, 2]).unwrap();
        let mut pred = gt.clone();
        assert_eq!(l2_loss(&pred, &gt).unwrap().0, 0.0);
        pred.data_mut()[1] = 3.0;
        pred.data_mut()[5] = 4.0;
        let (loss, grad) = l2_loss(&pred, &gt).unwrap();
        assert_eq!(loss, 12.5);
        assert_eq!(grad.data()[5], 4.0);
    }

    proptest::proptest! {
        #[test]
        fn softmax_simplex_and_nonnegative_xent(seed in 0u64..10_000, scale in 0.1f64..50.0, t in 0.05f64..1.0) {
            let z = Tensor::<f64>::from_fn(&[1, 6, 2, 2], |i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0 * scale - scale / 2.0).unwrap();
            let p = softmax_channels(&z, t).unwrap();
            for px in 0..4 {
                let s: f64 = (0..6).map(|k| p.data()[k * 4 + px]).sum();
                proptest::prop_assert!((s - 1.0).abs() < 1e-9);
            }
            let target = softmax_channels(&z.map(|v| -v), 1.0).unwrap();
            let v = Tensor::filled(&[1, 1, 2, 2], 1.0).unwrap();
            proptest::prop_assert!(weighted_softmax_xent(&z, &target, &v).unwrap().0 >= 0.0);
        }
    }
}
