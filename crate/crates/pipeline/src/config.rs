//! Training hyperparameters and their `key value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use chromalab_core::quantize::{DEFAULT_NEIGHBORS, DEFAULT_SOFT_SIGMA, DEFAULT_TEMPERATURE};
use chromalab_core::rebalance::{DEFAULT_LAMBDA, DEFAULT_PRIOR_SIGMA};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Classification with the rebalancing weights of the priors file.
    ClassRebal,
    /// Classification with unit weights.
    Class,
    /// Direct ab regression.
    L2,
    /// Regression starting from a classification trunk.
    L2Finetune,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ClassRebal => "class_rebal",
            Self::Class => "class",
            Self::L2 => "l2",
            Self::L2Finetune => "l2_finetune",
        }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self, Self::L2 | Self::L2Finetune)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_rebal" => Ok(Self::ClassRebal),
            "class" => Ok(Self::Class),
            "l2" => Ok(Self::L2),
            "l2_finetune" => Ok(Self::L2Finetune),
            _ => Err(Error::Config(format!("unknown variant `{s}` (class_rebal, class, l2, l2_finetune)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Learning-rate stages for the plateau schedule.
pub const DEFAULT_LR_STAGES: [f64; 3] = [3e-5, 1e-5, 3e-6];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Learning rate per stage; training starts at the first and moves on
    /// each time the loss plateaus.
    pub lr_stages: Vec<f64>,
    /// Iterations per moving-average window of the plateau detector.
    pub plateau_window: u64,
    /// Relative improvement between consecutive windows below which the
    /// loss counts as a plateau.
    pub plateau_tolerance: f64,
    pub lambda: f64,
    pub prior_sigma: f64,
    pub soft_sigma: f64,
    pub neighbors: usize,
    pub temperature: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ClassRebal,
            lr_stages: DEFAULT_LR_STAGES.to_vec(),
            plateau_window: 1000,
            plateau_tolerance: 1e-3,
            lambda: DEFAULT_LAMBDA,
            prior_sigma: DEFAULT_PRIOR_SIGMA,
            soft_sigma: DEFAULT_SOFT_SIGMA,
            neighbors: DEFAULT_NEIGHBORS,
            temperature: DEFAULT_TEMPERATURE,
            batch_size: 8,
            iterations: 2000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

impl TrainConfig {
    /// Rescales the default stage ratios (1, 1/3, 1/10) to start at `lr`.
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr_stages = vec![lr, lr / 3.0, lr / 10.0];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lr_stages.is_empty() || self.lr_stages.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return bad(format!("learning rates must be positive, got {:?}", self.lr_stages));
        }
        if self.plateau_window == 0 {
            return bad("plateau window must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        for (name, v) in [("prior sigma", self.prior_sigma), ("soft sigma", self.soft_sigma)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} {v} must be positive"));
            }
        }
        if !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return bad(format!("temperature {} outside (0, 1]", self.temperature));
        }
        if self.neighbors == 0 || self.batch_size == 0 {
            return bad("neighbors and batch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.plateau_tolerance >= 0.0) {
            return bad("weight decay and plateau tolerance must be nonnegative".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let stages: Vec<String> = self.lr_stages.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "variant {}", self.variant);
        let _ = writeln!(s, "lr_stages {}", stages.join(","));
        let _ = writeln!(s, "plateau_window {}", self.plateau_window);
        let _ = writeln!(s, "plateau_tolerance {}", self.plateau_tolerance);
        let _ = writeln!(s, "lambda {}", self.lambda);
        let _ = writeln!(s, "prior_sigma {}", self.prior_sigma);
        let _ = writeln!(s, "soft_sigma {}", self.soft_sigma);
        let _ = writeln!(s, "neighbors {}", self.neighbors);
        let _ = writeln!(s, "temperature {}", self.temperature);
        let _ = writeln!(s, "batch_size {}", self.batch_size);
        let _ = writeln!(s, "iterations {}", self.iterations);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "beta1 {}", self.beta1);
        let _ = writeln!(s, "beta2 {}", self.beta2);
        let _ = writeln!(s, "eps {}", self.eps);
        let _ = writeln!(s, "weight_decay {}", self.weight_decay);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
        }
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::Config(format!("expected `key value`, got `{line}`")))?;
            if !seen.insert(key) {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
            match key {
                "variant" => cfg.variant = v.parse()?,
                "lr_stages" => cfg.lr_stages = v.split(',').map(|s| num(key, s)).collect::<Result<_>>()?,
                "plateau_window" => cfg.plateau_window = num(key, v)?,
                "plateau_tolerance" => cfg.plateau_tolerance = num(key, v)?,
                "lambda" => cfg.lambda = num(key, v)?,
                "prior_sigma" => cfg.prior_sigma = num(key, v)?,
                "soft_sigma" => cfg.soft_sigma = num(key, v)?,
                "neighbors" => cfg.neighbors = num(key, v)?,
                "temperature" => cfg.temperature = num(key, v)?,
                "batch_size" => cfg.batch_size = num(key, v)?,
                "iterations" => cfg.iterations = num(key, v)?,
                "seed" => cfg.seed = num(key, v)?,
                "beta1" => cfg.beta1 = num(key, v)?,
                "beta2" => cfg.beta2 = num(key, v)?,
                "eps" => cfg.eps = num(key, v)?,
                "weight_decay" => cfg.weight_decay = num(key, v)?,
                _ => return Err(Error::Config(format!("unknown key {key}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = TrainConfig { variant: Variant::L2Finetune, seed: 17, ..TrainConfig::default() }.with_lr(1e-3);
        let text = cfg.to_text();
        let back = TrainConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_stages, vec![3e-5, 1e-5, 3e-6]);
        assert_eq!((cfg.beta1, cfg.beta2, cfg.weight_decay), (0.9, 0.99, 1e-3));
        assert_eq!((cfg.lambda, cfg.prior_sigma, cfg.temperature), (0.5, 5.0, 0.38));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::parse("lambda 1.5").is_err());
        assert!(TrainConfig::parse("temperature 0").is_err());
        assert!(TrainConfig::parse("variant regression").is_err());
        assert!(TrainConfig::parse("seed 1\nseed 2").is_err());
        assert!(TrainConfig::parse("what 1").is_err());
    }
}
