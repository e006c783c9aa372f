//! The training loop: batch assembly, loss, backward, ADAM and the plateau
//! learning-rate schedule.

use std::fmt::Write as _;

use chromalab_core::colorspace::{split_channels, srgb_to_lab};
use chromalab_core::dataset::{fit_square, Dataset};
use chromalab_core::quantize::{build_gamut, encode_soft_sparse, GamutBins, SparseDistribution, DEFAULT_GRID_STEP};
use chromalab_core::rebalance::{compute_weights, smooth_prior, PriorWeights};
use chromalab_nn::loss::{l2_loss, weighted_softmax_xent};
use chromalab_nn::{AdamConfig, AdamState, Mode, Param, Tensor};

use crate::arch::ArchitectureConfig;
use crate::config::{TrainConfig, Variant};
use crate::model::{build_model, normalize_lightness, HeadKind, Model, AB_SCALE};
use crate::{Error, Result};

/// Trailing window of the smoothed loss reported in the log.
pub const SMOOTH_WINDOW: usize = 100;

/// Position in the seeded epoch-by-epoch shuffle of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerState {
    pub seed: u64,
    pub epoch: u64,
    pub cursor: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    pub window_sum: f64,
    pub window_len: u64,
    pub previous_mean: Option<f64>,
}

/// Everything besides tensors that a resumed run needs to continue
/// bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub iteration: u64,
    pub sampler: SamplerState,
    pub lr_stage: usize,
    pub plateau: PlateauState,
    /// The last [`SMOOTH_WINDOW`] losses.
    pub recent: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: u64,
    pub loss: f64,
    pub smoothed: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "# iteration loss smoothed lr";

/// One line per entry, floats in shortest round-trip form.
pub fn format_log_entry(e: &LogEntry) -> String {
    format!("{} {} {} {}", e.iteration, e.loss, e.smoothed, e.lr)
}

pub fn format_log(entries: &[LogEntry]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in entries {
        let _ = writeln!(s, "{}", format_log_entry(e));
    }
    s
}

pub fn parse_log(text: &str) -> Result<Vec<LogEntry>> {
    let bad = |n: usize| Error::Config(format!("loss log line {}: expected `iteration loss smoothed lr`", n + 1));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(' ').collect();
            if f.len() != 4 {
                return Err(bad(n));
            }
            Ok(LogEntry {
                iteration: f[0].parse().map_err(|_| bad(n))?,
                loss: f[1].parse().map_err(|_| bad(n))?,
                smoothed: f[2].parse().map_err(|_| bad(n))?,
                lr: f[3].parse().map_err(|_| bad(n))?,
            })
        })
        .collect()
}

enum Targets {
    Classes { soft: Vec<SparseDistribution>, weights: Vec<Vec<f32>> },
    Chroma(Vec<Vec<f32>>),
}

/// Per-image inputs and targets, prepared once.
struct Prepared {
    inputs: Vec<Vec<f32>>,
    targets: Targets,
    q: usize,
    head: usize,
}

/// Rebalancing weights for `cfg`, recomputed from the stored prior when
/// λ or σ differ from the file.
fn rebalance_weights(priors: &PriorWeights, cfg: &TrainConfig, bins: &GamutBins) -> Result<Vec<f64>> {
    if priors.lambda == cfg.lambda && priors.sigma == cfg.prior_sigma {
        return Ok(priors.weights.clone());
    }
    let smoothed = if priors.sigma == cfg.prior_sigma {
        priors.smoothed_prior.clone()
    } else {
        smooth_prior(&priors.prior, bins, cfg.prior_sigma)?
    };
    Ok(compute_weights(&smoothed, cfg.lambda)?)
}

fn prepare(dataset: &Dataset, arch: &ArchitectureConfig, cfg: &TrainConfig, bins: Option<&GamutBins>, weights: Option<&[f64]>) -> Result<Prepared> {
    let size = arch.input_size;
    let factor = arch.head_factor();
    let head = arch.head_size();
    let mut inputs = Vec::with_capacity(dataset.len());
    let mut soft = Vec::new();
    let mut pixel_weights = Vec::new();
    let mut chroma = Vec::new();
    for img in dataset.images() {
        let img = if img.width() == size && img.height() == size { img.clone() } else { fit_square(img, size)? };
        let (l, ab) = split_channels(&srgb_to_lab(&img));
        inputs.push(l.data().iter().map(|&v| normalize_lightness(v)).collect());
        let small = ab.downsample_area(factor)?;
        match bins {
            Some(bins) => {
                let z = encode_soft_sparse(&small, bins, cfg.neighbors, cfg.soft_sigma)?;
                let v = (0..small.len())
                    .map(|i| weights.map_or(1.0, |w| w[z.modal_bin(i)] as f32))
                    .collect();
                soft.push(z);
                pixel_weights.push(v);
            }
            None => {
                let mut t = small.a().to_vec();
                t.extend_from_slice(small.b());
                chroma.push(t);
            }
        }
    }
    let (targets, q) = match bins {
        Some(b) => (Targets::Classes { soft, weights: pixel_weights }, b.len()),
        None => (Targets::Chroma(chroma), 2),
    };
    Ok(Prepared { inputs, targets, q, head })
}

/// Inputs and targets for one batch.
pub struct Batch {
    pub input: Tensor<f32>,
    /// Dense soft targets `[N, Q, h, w]` or ab `[N, 2, h, w]`.
    pub target: Tensor<f32>,
    /// Per-pixel weights `[N, 1, h, w]`; unused for regression.
    pub weights: Option<Tensor<f32>>,
}

impl Prepared {
    fn batch(&self, indices: &[usize], size: usize) -> Result<Batch> {
        let n = indices.len();
        let hw = self.head * self.head;
        let mut input = Vec::with_capacity(n * size * size);
        for &i in indices {
            input.extend_from_slice(&self.inputs[i]);
        }
        let input = Tensor::new(&[n, 1, size, size], input)?;
        match &self.targets {
            Targets::Classes { soft, weights } => {
                let q = self.q;
                let mut t = vec![0.0f32; n * q * hw];
                let mut v = Vec::with_capacity(n * hw);
                for (b, &i) in indices.iter().enumerate() {
                    for p in 0..hw {
                        for (k, w) in soft[i].pixel(p) {
                            t[(b * q + k) * hw + p] = w;
                        }
                    }
                    v.extend_from_slice(&weights[i]);
                }
                Ok(Batch {
                    input,
                    target: Tensor::new(&[n, q, self.head, self.head], t)?,
                    weights: Some(Tensor::new(&[n, 1, self.head, self.head], v)?),
                })
            }
            Targets::Chroma(ab) => {
                let mut t = Vec::with_capacity(n * 2 * hw);
                for &i in indices {
                    t.extend_from_slice(&ab[i]);
                }
                Ok(Batch { input, target: Tensor::new(&[n, 2, self.head, self.head], t)?, weights: None })
            }
        }
    }
}

/// Loss and head-output gradient for one batch.
pub fn batch_loss(head: HeadKind, output: &Tensor<f32>, batch: &Batch) -> Result<(f64, Tensor<f32>)> {
    match head {
        HeadKind::Classification { .. } => {
            let v = batch.weights.as_ref().ok_or_else(|| Error::Config("classification batch without weights".into()))?;
            Ok(weighted_softmax_xent(output, &batch.target, v)?)
        }
        HeadKind::Regression => {
            let pred = output.scale(AB_SCALE);
            let (loss, grad) = l2_loss(&pred, &batch.target)?;
            Ok((loss, grad.scale(AB_SCALE)))
        }
    }
}

pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: AdamState<f32>,
    state: TrainState,
    bins: Option<GamutBins>,
    data: Prepared,
    order: Vec<usize>,
    dataset_len: usize,
}

fn adam_config(cfg: &TrainConfig, lr: f64) -> AdamConfig {
    AdamConfig { lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps, weight_decay: cfg.weight_decay }
}

/// Resolves the output bins and rebalancing weights a variant needs.
fn variant_inputs(cfg: &TrainConfig, priors: Option<&PriorWeights>) -> Result<(Option<GamutBins>, Option<Vec<f64>>)> {
    match cfg.variant {
        Variant::ClassRebal => {
            let priors = priors.ok_or_else(|| Error::Config("class_rebal requires a priors file".into()))?;
            let bins = priors.bins()?;
            let w = rebalance_weights(priors, cfg, &bins)?;
            Ok((Some(bins), Some(w)))
        }
        Variant::Class => {
            let bins = match priors {
                Some(p) => p.bins()?,
                None => build_gamut(DEFAULT_GRID_STEP)?,
            };
            Ok((Some(bins), None))
        }
        Variant::L2 | Variant::L2Finetune => Ok((None, None)),
    }
}

impl Trainer {
    /// Fresh run. `source` supplies the trunk for `l2_finetune`.
    pub fn new(config: TrainConfig, arch: &ArchitectureConfig, dataset: &Dataset, priors: Option<&PriorWeights>, source: Option<&Model>) -> Result<Self> {
        config.validate()?;
        let (bins, weights) = variant_inputs(&config, priors)?;
        let head = match &bins {
            Some(b) => HeadKind::Classification { q: b.len() },
            None => HeadKind::Regression,
        };
        let mut model = build_model(arch, head, config.seed)?;
        if config.variant == Variant::L2Finetune {
            let source = source.ok_or_else(|| Error::Config("l2_finetune requires a source checkpoint".into()))?;
            model.copy_trunk_from(source)?;
        }
        let data = prepare(dataset, arch, &config, bins.as_ref(), weights.as_deref())?;
        let adam = {
            let params = model.params();
            let refs: Vec<&Param<f32>> = params.iter().map(|(_, p)| *p).collect();
            AdamState::new(adam_config(&config, config.lr_stages[0]), &refs)
        };
        let state = TrainState {
            iteration: 0,
            sampler: SamplerState { seed: dataset.seed(), epoch: 0, cursor: 0 },
            lr_stage: 0,
            plateau: PlateauState { window_sum: 0.0, window_len: 0, previous_mean: None },
            recent: Vec::new(),
        };
        Ok(Self { order: dataset.epoch_order(0), dataset_len: dataset.len(), config, model, adam, state, bins, data })
    }

    /// Continues from a checkpoint. The dataset and priors must be the ones
    /// the run started with.
    pub fn resume(ckpt: crate::checkpoint::Checkpoint, dataset: &Dataset, priors: Option<&PriorWeights>) -> Result<Self> {
        let config = ckpt.config.clone();
        config.validate()?;
        if ckpt.state.sampler.seed != dataset.seed() {
            return Err(Error::Config(format!(
                "checkpoint sampled with seed {}, dataset has seed {}",
                ckpt.state.sampler.seed,
                dataset.seed()
            )));
        }
        let (bins, weights) = variant_inputs(&config, priors)?;
        if bins.as_ref().map(|b| b.centers().to_vec()).unwrap_or_default() != ckpt.centers {
            return Err(Error::Config("priors do not match the checkpoint's color bins".into()));
        }
        let model = ckpt.model()?;
        let data = prepare(dataset, model.arch(), &config, bins.as_ref(), weights.as_deref())?;
        let order = dataset.epoch_order(ckpt.state.sampler.epoch);
        if ckpt.state.sampler.cursor as usize > dataset.len() {
            return Err(Error::Config("checkpoint sampler cursor exceeds dataset size".into()));
        }
        Ok(Self { order, dataset_len: dataset.len(), config, model, adam: ckpt.adam, state: ckpt.state, bins, data })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn adam(&self) -> &AdamState<f32> {
        &self.adam
    }

    pub fn bins(&self) -> Option<&GamutBins> {
        self.bins.as_ref()
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr_stages[self.state.lr_stage]
    }

    /// Raises the iteration budget, e.g. to continue a finished run.
    pub fn set_iterations(&mut self, iterations: u64) {
        self.config.iterations = iterations;
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.config.iterations
    }

    fn next_indices(&mut self) -> Vec<usize> {
        draw(&mut self.state.sampler, &mut self.order, self.dataset_len, self.config.batch_size)
    }

    /// The batch the next [`Trainer::step`] will use, without advancing.
    pub fn peek_batch(&self) -> Result<Batch> {
        let mut sampler = self.state.sampler;
        let mut order = self.order.clone();
        let idx = draw(&mut sampler, &mut order, self.dataset_len, self.config.batch_size);
        self.data.batch(&idx, self.model.input_size())
    }

    /// Loss and gradients for a batch without touching optimizer state.
    pub fn compute_gradients(&mut self, batch: &Batch) -> Result<f64> {
        self.model.zero_grad();
        let out = self.model.forward(&batch.input, Mode::Train)?;
        let (loss, grad) = batch_loss(self.model.head(), &out, batch)?;
        self.model.backward(&grad)?;
        Ok(loss)
    }

    /// One optimization step.
    pub fn step(&mut self) -> Result<LogEntry> {
        let idx = self.next_indices();
        let batch = self.data.batch(&idx, self.model.input_size())?;
        let iteration = self.state.iteration + 1;
        let loss = self.compute_gradients(&batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration, loss });
        }
        let lr = self.current_lr();
        self.adam.config.lr = lr;
        {
            let mut params: Vec<&mut Param<f32>> = self.model.params_mut().into_iter().map(|(_, p)| p).collect();
            self.adam.step(&mut params)?;
        }
        self.model.clear_caches();
        self.state.iteration = iteration;

        let recent = &mut self.state.recent;
        recent.push(loss);
        if recent.len() > SMOOTH_WINDOW {
            recent.remove(0);
        }
        let smoothed = recent.iter().sum::<f64>() / recent.len() as f64;
        self.update_plateau(loss);
        Ok(LogEntry { iteration, loss, smoothed, lr })
    }

    fn update_plateau(&mut self, loss: f64) {
        let p = &mut self.state.plateau;
        p.window_sum += loss;
        p.window_len += 1;
        if p.window_len < self.config.plateau_window {
            return;
        }
        let mean = p.window_sum / p.window_len as f64;
        if let Some(prev) = p.previous_mean {
            let improvement = (prev - mean) / prev.abs().max(f64::MIN_POSITIVE);
            if improvement < self.config.plateau_tolerance && self.state.lr_stage + 1 < self.config.lr_stages.len() {
                self.state.lr_stage += 1;
                log::info!(
                    "loss plateaued at iteration {} ({prev} -> {mean}); lr now {}",
                    self.state.iteration,
                    self.config.lr_stages[self.state.lr_stage]
                );
            }
        }
        p.previous_mean = Some(mean);
        p.window_sum = 0.0;
        p.window_len = 0;
    }

    /// Runs until the iteration budget, calling `on_step` after each step.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &LogEntry) -> Result<()>) -> Result<Vec<LogEntry>> {
        let mut log = Vec::new();
        while !self.is_done() {
            let e = self.step()?;
            on_step(self, &e)?;
            log.push(e);
        }
        Ok(log)
    }
}

/// Takes the next `count` dataset indices, reshuffling at epoch ends.
fn draw(s: &mut SamplerState, order: &mut Vec<usize>, len: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if s.cursor as usize >= len {
            s.epoch += 1;
            s.cursor = 0;
            *order = Dataset::order_for(s.seed, s.epoch, len);
        }
        out.push(order[s.cursor as usize]);
        s.cursor += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn log_round_trips(entries in prop::collection::vec((any::<u64>(), any::<f64>(), any::<f64>(), any::<f64>()), 0..20)) {
            let entries: Vec<LogEntry> = entries
                .into_iter()
                .map(|(iteration, loss, smoothed, lr)| LogEntry { iteration, loss, smoothed, lr })
                .collect();
            let text = format_log(&entries);
            let back = parse_log(&text).unwrap();
            prop_assert_eq!(format_log(&back), text);
        }
    }
}
