use chromalab_nn::conv::{conv2d_forward, ConvGeometry};
use chromalab_nn::gradcheck::instances;
use chromalab_nn::loss::{softmax_channels, weighted_softmax_xent};
use chromalab_nn::{AdamConfig, AdamState, BatchNorm2d, Conv2d, Layer, Mode, Param, Relu, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 20;
const TOL: f64 = 1e-4;

fn worst(errs: impl Iterator<Item = f64>) -> f64 {
    errs.fold(0.0, f64::max)
}

#[test]
fn conv_gradients() {
    for seed in 0..INSTANCES {
        let e = instances::conv(seed);
        assert!(e.iter().all(|&v| v < TOL), "seed {seed}: {e:?}");
    }
}

#[test]
fn batchnorm_gradients() {
    for seed in 0..INSTANCES {
        let e = instances::batchnorm(seed);
        assert!(e.iter().all(|&v| v < TOL), "seed {seed}: {e:?}");
    }
}

#[test]
fn elementwise_and_loss_gradients() {
    assert!(worst((0..INSTANCES).map(instances::relu)) < TOL);
    assert!(worst((0..INSTANCES).map(instances::upsample)) < TOL);
    assert!(worst((0..INSTANCES).map(instances::xent)) < TOL);
    assert!(worst((0..INSTANCES).map(instances::l2)) < TOL);
}

/// A dilated 3×3 kernel is the same as a (2d+1)-wide kernel with zeros
/// between the taps.
#[test]
fn dilation_equals_zero_inflated_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in 1..=3usize {
        let x = Tensor::<f64>::from_fn(&[2, 3, 9, 8], |_| rng.random_range(-1.0..1.0)).unwrap();
        let w = Tensor::<f64>::from_fn(&[2, 3, 3, 3], |_| rng.random_range(-1.0..1.0)).unwrap();
        let b = Tensor::<f64>::from_fn(&[2], |_| rng.random_range(-1.0..1.0)).unwrap();
        let k = 2 * d + 1;
        let mut inflated = Tensor::<f64>::zeros(&[2, 3, k, k]).unwrap();
        for o in 0..2 {
            for c in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        inflated.data_mut()[((o * 3 + c) * k + i * d) * k + j * d] = w.data()[((o * 3 + c) * 3 + i) * 3 + j];
                    }
                }
            }
        }
        let dense = ConvGeometry { kernel: k, stride: 1, dilation: 1, pad: d };
        for stride in [1, 2] {
            let dil = ConvGeometry::same(3, stride, d);
            let a = conv2d_forward(&x, &w, &b, &dil).unwrap();
            let bb = conv2d_forward(&x, &inflated, &b, &ConvGeometry { stride, ..dense }).unwrap();
            assert!(a.max_abs_diff(&bb).unwrap() < 1e-12);
        }
    }
}

/// conv → relu → bn → 1×1 conv → cross-entropy, run through the layer
/// wrappers.
struct Tiny {
    c1: Conv2d<f64>,
    relu: Relu<f64>,
    bn: BatchNorm2d<f64>,
    head: Conv2d<f64>,
}

impl Tiny {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            c1: Conv2d::new(1, 4, ConvGeometry::same(3, 1, 1), &mut rng).unwrap(),
            relu: Relu::new(),
            bn: BatchNorm2d::new(4).unwrap(),
            head: Conv2d::new(4, 5, ConvGeometry::same(1, 1, 1), &mut rng).unwrap(),
        }
    }

    fn loss(&mut self, x: &Tensor<f64>, t: &Tensor<f64>, v: &Tensor<f64>, backward: bool) -> f64 {
        let h = self.c1.forward(x, Mode::Train).unwrap();
        let h = self.relu.forward(&h, Mode::Train).unwrap();
        let h = self.bn.forward(&h, Mode::Train).unwrap();
        let z = self.head.forward(&h, Mode::Train).unwrap();
        let (loss, g) = weighted_softmax_xent(&z, t, v).unwrap();
        if backward {
            let g = self.head.backward(&g).unwrap();
            let g = self.bn.backward(&g).unwrap();
            let g = self.relu.backward(&g).unwrap();
            self.c1.backward(&g).unwrap();
        }
        loss
    }

    fn params(&mut self) -> Vec<&mut Param<f64>> {
        let mut out: Vec<&mut Param<f64>> = Vec::new();
        out.extend(self.c1.params_mut().into_iter().map(|(_, p)| p));
        out.extend(self.bn.params_mut().into_iter().map(|(_, p)| p));
        out.extend(self.head.params_mut().into_iter().map(|(_, p)| p));
        out
    }
}

fn batch(seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[2, 1, 6, 6], |_| rng.random_range(-1.0..1.0)).unwrap();
    let t = softmax_channels(&Tensor::from_fn(&[2, 5, 6, 6], |_| rng.random_range(-3.0..3.0)).unwrap(), 1.0).unwrap();
    let v = Tensor::from_fn(&[2, 1, 6, 6], |_| rng.random_range(0.5..2.0)).unwrap();
    (x, t, v)
}

#[test]
fn small_step_decreases_loss() {
    let (x, t, v) = batch(3);
    let mut net = Tiny::new(5);
    let before = net.loss(&x, &t, &v, true);
    let cfg = AdamConfig { lr: 1e-3, weight_decay: 0.0, ..AdamConfig::default() };
    let mut adam = {
        let ps = net.params();
        let refs: Vec<&Param<f64>> = ps.iter().map(|p| &**p).collect();
        AdamState::new(cfg, &refs)
    };
    adam.step(&mut net.params()).unwrap();
    let after = net.loss(&x, &t, &v, false);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn training_is_bit_deterministic() {
    let run = || {
        let (x, t, v) = batch(8);
        let mut net = Tiny::new(9);
        let mut adam = {
            let ps = net.params();
            let refs: Vec<&Param<f64>> = ps.iter().map(|p| &**p).collect();
            AdamState::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() }, &refs)
        };
        let mut losses = Vec::new();
        for _ in 0..5 {
            for p in net.params() {
                p.zero_grad();
            }
            losses.push(net.loss(&x, &t, &v, true).to_bits());
            adam.step(&mut net.params()).unwrap();
        }
        (losses, net.head.weight.value.clone())
    };
    assert_eq!(run(), run());
}
