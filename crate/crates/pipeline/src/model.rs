//! The colorization network: a stack of conv → ReLU (→ BN) blocks built
//! from an [`ArchitectureConfig`], followed by a 1×1 prediction head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use chromalab_nn::batchnorm::{batchnorm_forward_eval, EPS};
use chromalab_nn::conv::conv2d_forward;
use chromalab_nn::relu::relu_forward;
use chromalab_nn::upsample::upsample2x_forward;
use chromalab_nn::{BatchNorm2d, Conv2d, ConvGeometry, Layer, Mode, Param, Relu, Tensor, Upsample2x};

use crate::arch::{ArchitectureConfig, Stride};
use crate::{Error, Result};

/// Scale applied to the raw output of a regression head so that unit
/// activations span the ab range.
pub const AB_SCALE: f32 = 110.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Logits over `q` color bins.
    Classification { q: usize },
    /// Two channels, `AB_SCALE * (a, b)`.
    Regression,
}

impl HeadKind {
    pub fn channels(&self) -> usize {
        match *self {
            Self::Classification { q } => q,
            Self::Regression => 2,
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            Self::Classification { q } => format!("classification {q}"),
            Self::Regression => "regression".into(),
        }
    }
}

/// Maps lightness in `[0, 100]` to roughly `[-1, 1]`.
pub fn normalize_lightness(l: f32) -> f32 {
    (l - 50.0) / 50.0
}

enum Block {
    Up(Upsample2x),
    Conv(Conv2d),
    Relu(Relu),
    Bn(BatchNorm2d),
}

impl Block {
    fn layer(&mut self) -> &mut dyn Layer<f32> {
        match self {
            Block::Up(l) => l,
            Block::Conv(l) => l,
            Block::Relu(l) => l,
            Block::Bn(l) => l,
        }
    }
}

pub struct Model {
    arch: ArchitectureConfig,
    head: HeadKind,
    blocks: Vec<(String, Block)>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("head", &self.head).field("parameters", &self.parameter_count()).finish()
    }
}

/// Builds the network with He-normal weights drawn from `seed`. The
/// architecture (including declared derived columns) is validated first.
pub fn build_model(arch: &ArchitectureConfig, head: HeadKind, seed: u64) -> Result<Model> {
    arch.validate()?;
    if head.channels() == 0 {
        return Err(Error::Config("head needs at least one output channel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    let mut cin = 1;
    for l in &arch.layers {
        if l.stride == Stride::Up {
            blocks.push((format!("{}.up", l.name), Block::Up(Upsample2x::new())));
        }
        blocks.push((l.name.clone(), Block::Conv(Conv2d::new(cin, l.out_channels, l.geometry(), &mut rng)?)));
        blocks.push((format!("{}.relu", l.name), Block::Relu(Relu::new())));
        if l.batchnorm {
            blocks.push((format!("{}.bn", l.name), Block::Bn(BatchNorm2d::new(l.out_channels)?)));
        }
        cin = l.out_channels;
    }
    let head_conv = Conv2d::new(cin, head.channels(), ConvGeometry::same(1, 1, 1), &mut rng)?;
    blocks.push(("head".into(), Block::Conv(head_conv)));
    Ok(Model { arch: arch.clone(), head, blocks })
}

impl Model {
    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn input_size(&self) -> usize {
        self.arch.input_size
    }

    pub fn head_size(&self) -> usize {
        self.arch.head_size()
    }

    fn check_input(&self, x: &Tensor<f32>) -> Result<()> {
        let [_, c, h, w] = x.dims4()?;
        let s = self.arch.input_size;
        if c != 1 || h != s || w != s {
            return Err(Error::Arch(format!("model expects [N, 1, {s}, {s}], got {:?}", x.shape())));
        }
        Ok(())
    }

    /// Training-capable forward pass over normalized lightness `[N, 1, S, S]`.
    /// Returns raw head outputs (logits, or unscaled ab for regression).
    pub fn forward(&mut self, x: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (_, b) in &mut self.blocks {
            h = b.layer().forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Backpropagates from the head output gradient, accumulating into every
    /// parameter's `grad`.
    pub fn backward(&mut self, grad: &Tensor<f32>) -> Result<()> {
        let mut g = grad.clone();
        for (_, b) in self.blocks.iter_mut().rev() {
            g = b.layer().backward(&g)?;
        }
        Ok(())
    }

    /// Cache-free evaluation forward pass; usable through a shared
    /// reference.
    pub fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (_, b) in &self.blocks {
            h = match b {
                Block::Up(_) => upsample2x_forward(&h)?,
                Block::Conv(c) => conv2d_forward(&h, &c.weight.value, &c.bias.value, &c.geometry)?,
                Block::Relu(_) => relu_forward(&h),
                Block::Bn(bn) => {
                    if !bn.is_initialized() {
                        return Err(chromalab_nn::Error::Uninitialized.into());
                    }
                    batchnorm_forward_eval(&h, &bn.gamma.value, &bn.beta.value, &bn.running_mean, &bn.running_var, EPS)?
                }
            };
        }
        Ok(h)
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_caches(&mut self) {
        for (_, b) in &mut self.blocks {
            b.layer().clear_cache();
        }
    }

    /// Parameters in a fixed order, named `<layer>.<param>`.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<f32>)> {
        let mut out = Vec::new();
        for (name, b) in &mut self.blocks {
            match b {
                Block::Conv(c) => {
                    out.push((format!("{name}.weight"), &mut c.weight));
                    out.push((format!("{name}.bias"), &mut c.bias));
                }
                Block::Bn(bn) => {
                    out.push((format!("{name}.gamma"), &mut bn.gamma));
                    out.push((format!("{name}.beta"), &mut bn.beta));
                }
                _ => {}
            }
        }
        out
    }

    pub fn params(&self) -> Vec<(String, &Param<f32>)> {
        let mut out = Vec::new();
        for (name, b) in &self.blocks {
            match b {
                Block::Conv(c) => {
                    out.push((format!("{name}.weight"), &c.weight));
                    out.push((format!("{name}.bias"), &c.bias));
                }
                Block::Bn(bn) => {
                    out.push((format!("{name}.gamma"), &bn.gamma));
                    out.push((format!("{name}.beta"), &bn.beta));
                }
                _ => {}
            }
        }
        out
    }

    /// Every persisted tensor: parameter values in [`Model::params`] order,
    /// then batch norm statistics.
    pub fn state(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = self.params().into_iter().map(|(n, p)| (n, &p.value)).collect();
        for (name, b) in &self.blocks {
            if let Block::Bn(bn) = b {
                out.push((format!("{name}.running_mean"), &bn.running_mean));
                out.push((format!("{name}.running_var"), &bn.running_var));
                out.push((format!("{name}.initialized"), &bn.initialized));
            }
        }
        out
    }

    /// Mutable view in the same order as [`Model::state`].
    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for (name, b) in &mut self.blocks {
            match b {
                Block::Conv(c) => {
                    params.push((format!("{name}.weight"), &mut c.weight.value));
                    params.push((format!("{name}.bias"), &mut c.bias.value));
                }
                Block::Bn(bn) => {
                    params.push((format!("{name}.gamma"), &mut bn.gamma.value));
                    params.push((format!("{name}.beta"), &mut bn.beta.value));
                    buffers.push((format!("{name}.running_mean"), &mut bn.running_mean));
                    buffers.push((format!("{name}.running_var"), &mut bn.running_var));
                    buffers.push((format!("{name}.initialized"), &mut bn.initialized));
                }
                _ => {}
            }
        }
        params.extend(buffers);
        params
    }

    /// Copies every trunk tensor (everything except the head) from `other`,
    /// which must share this model's architecture.
    pub fn copy_trunk_from(&mut self, other: &Model) -> Result<()> {
        if other.arch != self.arch {
            return Err(Error::Config("source model has a different architecture".into()));
        }
        let src: std::collections::HashMap<String, &Tensor<f32>> = other.state().into_iter().collect();
        for (name, t) in self.state_mut() {
            if name.starts_with("head.") {
                continue;
            }
            let s = src.get(&name).ok_or_else(|| Error::Config(format!("source lacks {name}")))?;
            if s.shape() != t.shape() {
                return Err(Error::Config(format!("{name}: shape {:?} vs {:?}", s.shape(), t.shape())));
            }
            *t = (*s).clone();
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }
}
