//! Binary checkpoints (`CFZ1`, little-endian).
//!
//! Layout: magic, format version, a SHA-256 fingerprint of the architecture
//! text and head, the architecture and training configuration as text, the
//! color bins, the training state, every named tensor (parameters then batch
//! norm statistics) and the ADAM moments. Loading validates each section and
//! rejects trailing data.

use std::path::Path;

use chromalab_core::quantize::GamutBins;
use chromalab_nn::{AdamConfig, AdamState, Tensor};
use sha2::{Digest, Sha256};

use crate::arch::ArchitectureConfig;
use crate::config::TrainConfig;
use crate::model::{build_model, HeadKind, Model};
use crate::train::{PlateauState, SamplerState, TrainState, Trainer, SMOOTH_WINDOW};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFZ1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchitectureConfig,
    pub head: HeadKind,
    pub grid_step: f64,
    /// Bin centers of a classification head; empty for regression.
    pub centers: Vec<[f64; 2]>,
    pub config: TrainConfig,
    pub state: TrainState,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub adam: AdamState<f32>,
}

/// Hash of the architecture text and head description.
pub fn fingerprint(arch: &ArchitectureConfig, head: HeadKind) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(arch.to_text().as_bytes());
    h.update(b"\n");
    h.update(head.tag().as_bytes());
    h.finalize().into()
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer) -> Self {
        let model = trainer.model();
        Self {
            arch: model.arch().clone(),
            head: model.head(),
            grid_step: trainer.bins().map_or(0.0, GamutBins::grid_step),
            centers: trainer.bins().map(|b| b.centers().to_vec()).unwrap_or_default(),
            config: trainer.config().clone(),
            state: trainer.state().clone(),
            tensors: model.state().into_iter().map(|(n, t)| (n, t.clone())).collect(),
            adam: trainer.adam().clone(),
        }
    }

    /// Rebuilds the network and loads every tensor into it.
    pub fn model(&self) -> Result<Model> {
        let mut model = build_model(&self.arch, self.head, 0)?;
        let slots = model.state_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!("{} tensors for a model with {}", self.tensors.len(), slots.len())));
        }
        for ((name, slot), (stored, t)) in slots.into_iter().zip(&self.tensors) {
            if &name != stored || slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected {name} {:?}, found {stored} {:?}",
                    slot.shape(),
                    t.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(model)
    }

    /// Color bins of a classification checkpoint.
    pub fn bins(&self) -> Result<Option<GamutBins>> {
        match self.head {
            HeadKind::Regression => Ok(None),
            HeadKind::Classification { .. } => Ok(Some(GamutBins::from_centers(self.grid_step, self.centers.clone())?)),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        self.arch.validate()?;
        self.config.validate()?;
        match self.head {
            HeadKind::Classification { q } if q != self.centers.len() => {
                return bad(format!("head has {q} classes but {} bin centers are stored", self.centers.len()));
            }
            HeadKind::Regression if !self.centers.is_empty() => return bad("regression checkpoint with bin centers".into()),
            _ => {}
        }
        if self.config.variant.is_regression() != (self.head == HeadKind::Regression) {
            return bad(format!("variant {} does not match head {}", self.config.variant, self.head.tag()));
        }
        self.bins()?;
        if self.state.lr_stage >= self.config.lr_stages.len() {
            return bad(format!("lr stage {} out of range", self.state.lr_stage));
        }
        if self.state.recent.len() > SMOOTH_WINDOW {
            return bad("too many recent losses".into());
        }
        if self.tensors.iter().any(|(_, t)| t.data().iter().any(|v| !v.is_finite())) {
            return bad("non-finite parameter".into());
        }
        let model = self.model()?;
        let params = model.params();
        if self.adam.m.len() != params.len() || self.adam.v.len() != params.len() {
            return bad("optimizer moments do not match parameters".into());
        }
        for ((_, p), (m, v)) in params.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return bad("optimizer moment shape mismatch".into());
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.0.extend_from_slice(&fingerprint(&self.arch, self.head));
        w.str(&self.arch.to_text());
        w.str(&self.head.tag());
        w.str(&self.config.to_text());
        w.f64(self.grid_step);
        w.u32(self.centers.len() as u32);
        for c in &self.centers {
            w.f64(c[0]);
            w.f64(c[1]);
        }
        let s = &self.state;
        w.u64(s.iteration);
        w.u64(s.sampler.seed);
        w.u64(s.sampler.epoch);
        w.u64(s.sampler.cursor);
        w.u32(s.lr_stage as u32);
        w.f64(s.plateau.window_sum);
        w.u64(s.plateau.window_len);
        match s.plateau.previous_mean {
            Some(m) => {
                w.0.push(1);
                w.f64(m);
            }
            None => w.0.push(0),
        }
        w.u32(s.recent.len() as u32);
        for &l in &s.recent {
            w.f64(l);
        }
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.tensor(t);
        }
        let c = self.adam.config;
        w.u64(self.adam.step);
        for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
            w.f64(v);
        }
        w.u32(self.adam.m.len() as u32);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            w.tensor(m);
            w.tensor(v);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let stored_fp: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let arch = ArchitectureConfig::parse(&r.str()?)?;
        let head_tag = r.str()?;
        let head = parse_head(&head_tag)?;
        if fingerprint(&arch, head) != stored_fp {
            return Err(Error::Checkpoint("architecture fingerprint mismatch".into()));
        }
        let config = TrainConfig::parse(&r.str()?)?;
        let grid_step = r.f64()?;
        let n = r.count(16)?;
        let mut centers = Vec::with_capacity(n);
        for _ in 0..n {
            centers.push([r.f64()?, r.f64()?]);
        }
        let iteration = r.u64()?;
        let sampler = SamplerState { seed: r.u64()?, epoch: r.u64()?, cursor: r.u64()? };
        let lr_stage = r.u32()? as usize;
        let window_sum = r.f64()?;
        let window_len = r.u64()?;
        let previous_mean = match r.take(1)?[0] {
            0 => None,
            1 => Some(r.f64()?),
            b => return Err(Error::Checkpoint(format!("bad option tag {b}"))),
        };
        let n = r.count(8)?;
        let recent = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let state = TrainState {
            iteration,
            sampler,
            lr_stage,
            plateau: PlateauState { window_sum, window_len, previous_mean },
            recent,
        };
        let n = r.count(8)?;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            tensors.push((name, r.tensor()?));
        }
        let step = r.u64()?;
        let adam_cfg = AdamConfig { lr: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()?, weight_decay: r.f64()? };
        let n = r.count(8)?;
        let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            m.push(r.tensor()?);
            v.push(r.tensor()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ckpt = Self { arch, head, grid_step, centers, config, state, tensors, adam: AdamState { config: adam_cfg, step, m, v } };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn parse_head(tag: &str) -> Result<HeadKind> {
    if tag == "regression" {
        return Ok(HeadKind::Regression);
    }
    tag.strip_prefix("classification ")
        .and_then(|q| q.parse().ok())
        .filter(|&q| q > 0)
        .map(|q| HeadKind::Classification { q })
        .ok_or_else(|| Error::Checkpoint(format!("bad head `{tag}`")))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, t: &Tensor<f32>) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A length prefix, checked against the bytes left so corrupt counts
    /// cannot trigger huge allocations.
    fn count(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_bytes) > self.bytes.len() - self.pos {
            return Err(Error::Checkpoint(format!("count {n} exceeds remaining data")));
        }
        Ok(n)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.count(4)?;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|&n| n.saturating_mul(4) <= self.bytes.len() - self.pos);
        let n = n.ok_or_else(|| Error::Checkpoint(format!("tensor of shape {shape:?} exceeds remaining data")))?;
        let raw = self.take(n * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(Tensor::new(&shape, data)?)
    }
}
