//! Empirical color prior and class-rebalancing weights.
//!
//! The weights are `w ∝ ((1 - λ) p̃ + λ / Q)^-1`, scaled so that
//! `Σ_q p̃_q w_q = 1`, where `p̃` is the empirical prior smoothed with a
//! Gaussian over the `ab` lattice.

use std::borrow::Borrow;

use crate::colorspace::{ChromaPlane, LabImage};
use crate::quantize::{argmax, GamutBins};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_PRIOR_SIGMA: f64 = 5.0;
/// Smoothing kernels are truncated at this many standard deviations.
pub const KERNEL_RADIUS_SIGMAS: f64 = 4.0;

const SIMPLEX_TOL: f64 = 1e-9;

/// Per-bin pixel counts. Counting is associative, so partial counts from
/// independent workers can be merged in any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorCounts {
    counts: Vec<u64>,
}

impl PriorCounts {
    pub fn new(q: usize) -> Self {
        Self { counts: vec![0; q] }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add_chroma(&mut self, ab: &ChromaPlane, bins: &GamutBins) {
        for [a, b] in ab.iter() {
            self.counts[bins.nearest(a as f64, b as f64)] += 1;
        }
    }

    pub fn add_image(&mut self, img: &LabImage, bins: &GamutBins) {
        for (&a, &b) in img.a().iter().zip(img.b()) {
            self.counts[bins.nearest(a as f64, b as f64)] += 1;
        }
    }

    pub fn merge(&mut self, other: &PriorCounts) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot merge counts over {} and {} bins",
                self.counts.len(),
                other.counts.len()
            )));
        }
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        Ok(())
    }

    pub fn to_prior(&self) -> Result<EmpiricalPrior> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(EmpiricalPrior {
            p: self.counts.iter().map(|&c| c as f64 / total as f64).collect(),
            pixel_count: total,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPrior {
    pub p: Vec<f64>,
    pub pixel_count: u64,
}

/// Hard-assigns every pixel in the dataset to its nearest bin and normalizes
/// the counts.
pub fn estimate_prior<I>(dataset: I, bins: &GamutBins) -> Result<EmpiricalPrior>
where
    I: IntoIterator,
    I::Item: Borrow<LabImage>,
{
    let mut counts = PriorCounts::new(bins.len());
    for img in dataset {
        counts.add_image(img.borrow(), bins);
    }
    counts.to_prior()
}

fn gaussian_taps(sigma: f64, step: f64) -> Vec<f64> {
    let radius = (KERNEL_RADIUS_SIGMAS * sigma / step).floor() as i64;
    (-radius..=radius)
        .map(|i| {
            let d = i as f64 * step;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Smooths a prior with a truncated, normalized 2D Gaussian of width `sigma`
/// (ab units) on the full lattice, restricts back to the in-gamut bins and
/// renormalizes.
pub fn smooth_prior(p: &[f64], bins: &GamutBins, sigma: f64) -> Result<Vec<f64>> {
    if p.len() != bins.len() {
        return Err(Error::DimensionMismatch(format!(
            "prior has {} entries, gamut has {}",
            p.len(),
            bins.len()
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param("sigma", format!("{sigma} must be > 0")));
    }
    let step = bins.grid_step();
    let taps = gaussian_taps(sigma, step);
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let radius = (taps.len() / 2) as i64;

    let mut out = vec![0.0; p.len()];
    for (q, c) in bins.centers().iter().enumerate() {
        let ia = (c[0] / step).round() as i64;
        let ib = (c[1] / step).round() as i64;
        let mut acc = 0.0;
        for (di, &ta) in taps.iter().enumerate() {
            for (dj, &tb) in taps.iter().enumerate() {
                let src = bins.at_lattice(ia + di as i64 - radius, ib + dj as i64 - radius);
                if let Some(j) = src {
                    acc += ta * tb * p[j];
                }
            }
        }
        out[q] = acc;
    }
    let total: f64 = out.iter().sum();
    if total <= 0.0 {
        return Err(Error::param("prior", "has no mass"));
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Rebalancing weights for mixing weight `lambda`.
///
/// `lambda = 0` requires a strictly positive prior.
pub fn compute_weights(smoothed: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param("lambda", format!("{lambda} must lie in [0, 1]")));
    }
    if smoothed.is_empty() {
        return Err(Error::param("prior", "is empty"));
    }
    if lambda == 1.0 {
        return Ok(vec![1.0; smoothed.len()]);
    }
    if lambda == 0.0 {
        if let Some(q) = smoothed.iter().position(|&v| v <= 0.0) {
            return Err(Error::ZeroPrior(q));
        }
    }
    let uniform = 1.0 / smoothed.len() as f64;
    let raw: Vec<f64> = smoothed
        .iter()
        .map(|&p| 1.0 / ((1.0 - lambda) * p + lambda * uniform))
        .collect();
    let expectation: f64 = smoothed.iter().zip(&raw).map(|(p, w)| p * w).sum();
    Ok(raw.into_iter().map(|w| w / expectation).collect())
}

/// Weight of the modal bin of a (soft-encoded) target pixel.
pub fn pixel_weight(z: &[f32], weights: &[f64]) -> f64 {
    weights[argmax(z)]
}

/// A complete set of rebalancing statistics for one gamut.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorWeights {
    pub grid_step: f64,
    pub centers: Vec<[f64; 2]>,
    pub lambda: f64,
    pub sigma: f64,
    pub pixel_count: u64,
    /// Empirical prior p.
    pub prior: Vec<f64>,
    /// Smoothed prior p̃.
    pub smoothed_prior: Vec<f64>,
    /// Weights at `lambda`.
    pub weights: Vec<f64>,
    /// Weights at λ = 0, used by the class-balanced metric. Absent when the
    /// smoothed prior has empty bins.
    pub weights_lambda0: Option<Vec<f64>>,
}

impl PriorWeights {
    pub fn from_prior(prior: EmpiricalPrior, bins: &GamutBins, lambda: f64, sigma: f64) -> Result<Self> {
        let smoothed_prior = smooth_prior(&prior.p, bins, sigma)?;
        let weights = compute_weights(&smoothed_prior, lambda)?;
        let weights_lambda0 = match compute_weights(&smoothed_prior, 0.0) {
            Ok(w) => Some(w),
            Err(Error::ZeroPrior(q)) => {
                log::warn!("smoothed prior is zero at bin {q}; lambda = 0 weights omitted");
                None
            }
            Err(e) => return Err(e),
        };
        let out = Self {
            grid_step: bins.grid_step(),
            centers: bins.centers().to_vec(),
            lambda,
            sigma,
            pixel_count: prior.pixel_count,
            prior: prior.p,
            smoothed_prior,
            weights,
            weights_lambda0,
        };
        out.validate()?;
        Ok(out)
    }

    /// Estimates the prior from a dataset and derives the weights.
    pub fn estimate<I>(dataset: I, bins: &GamutBins, lambda: f64, sigma: f64) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: Borrow<LabImage>,
    {
        Self::from_prior(estimate_prior(dataset, bins)?, bins, lambda, sigma)
    }

    /// Flat prior with unit weights, mostly useful for tests and as the
    /// "no rebalancing" configuration.
    pub fn uniform(bins: &GamutBins) -> Self {
        let q = bins.len();
        let p = vec![1.0 / q as f64; q];
        Self {
            grid_step: bins.grid_step(),
            centers: bins.centers().to_vec(),
            lambda: 1.0,
            sigma: DEFAULT_PRIOR_SIGMA,
            pixel_count: 0,
            prior: p.clone(),
            smoothed_prior: p.clone(),
            weights: vec![1.0; q],
            weights_lambda0: Some(compute_weights(&p, 0.0).expect("uniform prior is positive")),
        }
    }

    pub fn q(&self) -> usize {
        self.centers.len()
    }

    pub fn bins(&self) -> Result<GamutBins> {
        GamutBins::from_centers(self.grid_step, self.centers.clone())
    }

    /// Checks every structural and numerical invariant.
    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        let bad = |msg: String| Err(Error::InvalidPriors(msg));
        if q == 0 {
            return bad("no bins".into());
        }
        for (name, v) in [
            ("prior", &self.prior),
            ("smoothed_prior", &self.smoothed_prior),
            ("weights", &self.weights),
        ] {
            if v.len() != q {
                return bad(format!("{name} has {} entries, expected {q}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} has non-finite entries"));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma {} must be positive", self.sigma));
        }
        for (name, v) in [("prior", &self.prior), ("smoothed_prior", &self.smoothed_prior)] {
            if v.iter().any(|&x| x < 0.0) {
                return bad(format!("{name} has negative entries"));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return bad(format!("{name} sums to {s}"));
            }
        }
        let check_weights = |name: &str, w: &[f64]| -> Result<()> {
            if w.iter().any(|&x| !(x > 0.0)) {
                return bad(format!("{name} must be strictly positive"));
            }
            let e: f64 = self.smoothed_prior.iter().zip(w).map(|(p, w)| p * w).sum();
            if (e - 1.0).abs() > SIMPLEX_TOL {
                return bad(format!("{name} has expectation {e} under the smoothed prior"));
            }
            Ok(())
        };
        check_weights("weights", &self.weights)?;
        if let Some(w0) = &self.weights_lambda0 {
            if w0.len() != q {
                return bad(format!("weights_lambda0 has {} entries, expected {q}", w0.len()));
            }
            check_weights("weights_lambda0", w0)?;
        }
        // The stored weights must be the ones lambda produces.
        let expected = compute_weights(&self.smoothed_prior, self.lambda)?;
        for (i, (a, b)) in expected.iter().zip(&self.weights).enumerate() {
            if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
                return bad(format!("weight {i} = {b} is inconsistent with lambda {}", self.lambda));
            }
        }
        GamutBins::from_centers(self.grid_step, self.centers.clone())
            .map_err(|e| Error::InvalidPriors(e.to_string()))?;
        Ok(())
    }
}
