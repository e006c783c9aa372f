//! Colorization accuracy metrics and bootstrap statistics.
//!
//! The raw-accuracy metric thresholds the per-pixel Euclidean `ab` distance
//! at every integer from 0 to 150 inclusive; the AuC is the mean accuracy over
//! those 151 thresholds, in percent. The class-balanced variant weights each
//! pixel by the λ = 0 rebalancing weight of its ground-truth bin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorspace::ChromaPlane;
use crate::quantize::GamutBins;
use crate::rebalance::PriorWeights;
use crate::{Error, Result};

pub const MAX_THRESHOLD: u32 = 150;
pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Cumulative accuracy as a function of the distance threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct AucCurve {
    pub thresholds: Vec<u32>,
    pub accuracy: Vec<f64>,
    /// Area under the curve, normalized to percent.
    pub auc: f64,
}

/// Histogram of per-pixel distances bucketed by the smallest integer
/// threshold that admits them. Histograms from several images can be merged
/// to obtain pooled curves.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceHistogram {
    // Bucket MAX_THRESHOLD + 1 collects everything beyond the sweep.
    mass: Vec<f64>,
}

impl Default for DistanceHistogram {
    fn default() -> Self {
        Self {
            mass: vec![0.0; MAX_THRESHOLD as usize + 2],
        }
    }
}

fn bucket(d: f64) -> usize {
    let c = d.ceil();
    if c.is_nan() || c > MAX_THRESHOLD as f64 {
        MAX_THRESHOLD as usize + 1
    } else {
        c as usize
    }
}

fn check_same(pred: &ChromaPlane, gt: &ChromaPlane) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Per-pixel Euclidean `ab` distance.
pub fn chroma_distances(pred: &ChromaPlane, gt: &ChromaPlane) -> Result<Vec<f64>> {
    check_same(pred, gt)?;
    Ok(pred
        .iter()
        .zip(gt.iter())
        .map(|(p, g)| {
            let da = p[0] as f64 - g[0] as f64;
            let db = p[1] as f64 - g[1] as f64;
            (da * da + db * db).sqrt()
        })
        .collect())
}

impl DistanceHistogram {
    pub fn add(&mut self, distance: f64, weight: f64) {
        self.mass[bucket(distance)] += weight;
    }

    pub fn merge(&mut self, other: &DistanceHistogram) {
        for (m, o) in self.mass.iter_mut().zip(&other.mass) {
            *m += o;
        }
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn curve(&self) -> AucCurve {
        let total = self.total();
        let mut cum = 0.0;
        let mut accuracy = Vec::with_capacity(MAX_THRESHOLD as usize + 1);
        for m in &self.mass[..=MAX_THRESHOLD as usize] {
            cum += m;
            accuracy.push(if total > 0.0 { (cum / total).min(1.0) } else { 0.0 });
        }
        let auc = accuracy.iter().sum::<f64>() / accuracy.len() as f64 * 100.0;
        AucCurve {
            thresholds: (0..=MAX_THRESHOLD).collect(),
            accuracy,
            auc,
        }
    }
}

/// Builds the (optionally weighted) distance histogram of one image.
pub fn distance_histogram(
    pred: &ChromaPlane,
    gt: &ChromaPlane,
    weights: Option<&[f64]>,
) -> Result<DistanceHistogram> {
    let d = chroma_distances(pred, gt)?;
    let mut hist = DistanceHistogram::default();
    match weights {
        None => d.iter().for_each(|&x| hist.add(x, 1.0)),
        Some(w) => {
            if w.len() != d.len() {
                return Err(Error::LengthMismatch {
                    what: "pixel weights",
                    expected: d.len(),
                    actual: w.len(),
                });
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::param("weights", "must be finite and nonnegative"));
            }
            // Constant weights are the unweighted metric; counting keeps it exact.
            let constant = w.windows(2).all(|p| p[0] == p[1]);
            for (&x, &wi) in d.iter().zip(w) {
                hist.add(x, if constant { 1.0 } else { wi });
            }
        }
    }
    Ok(hist)
}

/// Accuracy curve of the fraction of pixels within each integer threshold.
pub fn auc_cmf(pred: &ChromaPlane, gt: &ChromaPlane, weights: Option<&[f64]>) -> Result<AucCurve> {
    Ok(distance_histogram(pred, gt, weights)?.curve())
}

/// Per-pixel class-balancing weights for a ground-truth plane, normalized to
/// mean 1 over the plane.
pub fn class_balance_weights(gt: &ChromaPlane, priors: &PriorWeights, bins: &GamutBins) -> Result<Vec<f64>> {
    if priors.q() != bins.len() {
        return Err(Error::DimensionMismatch(format!(
            "priors have {} bins, gamut has {}",
            priors.q(),
            bins.len()
        )));
    }
    let w0 = priors.weights_lambda0.as_ref().ok_or_else(|| {
        Error::InvalidPriors("priors carry no lambda = 0 weights (smoothed prior has empty bins)".into())
    })?;
    let raw: Vec<f64> = gt.iter().map(|[a, b]| w0[bins.nearest(a as f64, b as f64)]).collect();
    if raw.windows(2).all(|p| p[0] == p[1]) {
        return Ok(vec![1.0; raw.len()]);
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Class-balanced AuC: pixels are weighted inversely by the prior probability
/// of their ground-truth color class.
pub fn rebalanced_auc(
    pred: &ChromaPlane,
    gt: &ChromaPlane,
    priors: &PriorWeights,
    bins: &GamutBins,
) -> Result<AucCurve> {
    check_same(pred, gt)?;
    let w = class_balance_weights(gt, priors, bins)?;
    auc_cmf(pred, gt, Some(&w))
}

/// Mean chroma magnitude `sqrt(a² + b²)`.
pub fn mean_chroma(y: &ChromaPlane) -> f64 {
    let total: f64 = y
        .iter()
        .map(|[a, b]| ((a as f64).powi(2) + (b as f64).powi(2)).sqrt())
        .sum();
    total / y.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapEstimate {
    pub mean: f64,
    pub se: f64,
}

fn mean_of(outcomes: &[bool]) -> f64 {
    outcomes.iter().filter(|&&o| o).count() as f64 / outcomes.len() as f64
}

fn resampled_mean(rng: &mut ChaCha8Rng, outcomes: &[bool]) -> f64 {
    let n = outcomes.len();
    let hits = (0..n).filter(|_| outcomes[rng.random_range(0..n)]).count();
    hits as f64 / n as f64
}

/// Sample mean and bootstrap standard error (standard deviation of
/// `resamples` resampled means).
pub fn bootstrap_mean_se(outcomes: &[bool], resamples: usize, seed: u64) -> Result<BootstrapEstimate> {
    if outcomes.is_empty() {
        return Err(Error::param("outcomes", "must be non-empty"));
    }
    if resamples < 2 {
        return Err(Error::param("resamples", "need at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..resamples).map(|_| resampled_mean(&mut rng, outcomes)).collect();
    let m = means.iter().sum::<f64>() / resamples as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (resamples - 1) as f64;
    Ok(BootstrapEstimate {
        mean: mean_of(outcomes),
        se: var.sqrt(),
    })
}

/// Two-sided bootstrap test of equal means. Both groups are resampled from
/// the pooled outcomes (the null hypothesis), and the p-value is the
/// fraction of resampled differences at least as extreme as the observed one,
/// with the usual +1 correction.
pub fn bootstrap_compare(a: &[bool], b: &[bool], resamples: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("outcomes", "both groups must be non-empty"));
    }
    if resamples == 0 {
        return Err(Error::param("resamples", "must be positive"));
    }
    // Canonical argument order makes the test exactly symmetric.
    let (x, y) = if (a.len(), a) <= (b.len(), b) { (a, b) } else { (b, a) };
    let observed = (mean_of(x) - mean_of(y)).abs();
    let mut pooled: Vec<bool> = x.iter().chain(y).copied().collect();
    pooled.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..resamples {
        let mx = (0..x.len()).filter(|_| pooled[rng.random_range(0..pooled.len())]).count() as f64 / x.len() as f64;
        let my = (0..y.len()).filter(|_| pooled[rng.random_range(0..pooled.len())]).count() as f64 / y.len() as f64;
        if (mx - my).abs() >= observed - 1e-12 {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (resamples + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::build_gamut;
    use proptest::prelude::*;
    use rand::Rng;

    fn plane(a: Vec<f32>, b: Vec<f32>) -> ChromaPlane {
        let n = a.len();
        ChromaPlane::new(n, 1, a, b).unwrap()
    }

    fn random_plane(rng: &mut ChaCha8Rng, n: usize, range: f32) -> ChromaPlane {
        plane(
            (0..n).map(|_| rng.random_range(-range..range)).collect(),
            (0..n).map(|_| rng.random_range(-range..range)).collect(),
        )
    }

    fn oracle(pred: &ChromaPlane, gt: &ChromaPlane, w: Option<&[f64]>) -> (Vec<f64>, f64) {
        let n = pred.len();
        let ones = vec![1.0; n];
        let w = w.unwrap_or(&ones);
        let total: f64 = w.iter().sum();
        let mut acc = Vec::new();
        for t in 0..=150u32 {
            let mut within = 0.0;
            for i in 0..n {
                let (p, g) = (pred.get(i), gt.get(i));
                let d = ((p[0] as f64 - g[0] as f64).powi(2) + (p[1] as f64 - g[1] as f64).powi(2)).sqrt();
                if d <= t as f64 {
                    within += w[i];
                }
            }
            acc.push(within / total);
        }
        let auc = acc.iter().sum::<f64>() / 151.0 * 100.0;
        (acc, auc)
    }

    #[test]
    fn perfect_prediction() {
        let y = plane(vec![10.0, -40.0, 3.0], vec![0.0, 22.0, -77.0]);
        let c = auc_cmf(&y, &y, None).unwrap();
        assert_eq!(c.auc, 100.0);
        assert_eq!(c.thresholds.len(), 151);
    }

    #[test]
    fn single_pixel_at_75() {
        let c = auc_cmf(&plane(vec![45.0], vec![60.0]), &plane(vec![0.0], vec![0.0]), None).unwrap();
        assert_eq!(c.auc, 76.0 / 151.0 * 100.0);
        assert_eq!(c.accuracy[74], 0.0);
        assert_eq!(c.accuracy[75], 1.0);
    }

    #[test]
    fn matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let pred = random_plane(&mut rng, 200, 110.0);
            let gt = random_plane(&mut rng, 200, 110.0);
            let c = auc_cmf(&pred, &gt, None).unwrap();
            let (acc, auc) = oracle(&pred, &gt, None);
            assert_eq!(c.accuracy, acc);
            assert_eq!(c.auc, auc);
        }
    }

    #[test]
    fn integer_distances_land_on_threshold() {
        // 3-4-5 triangles hit thresholds exactly
        let pred = plane(vec![3.0, 30.0, 0.0], vec![4.0, 40.0, 0.0]);
        let gt = plane(vec![0.0; 3], vec![0.0; 3]);
        let c = auc_cmf(&pred, &gt, None).unwrap();
        let (acc, auc) = oracle(&pred, &gt, None);
        assert_eq!(c.accuracy, acc);
        assert_eq!(c.auc, auc);
    }

    #[test]
    fn weighted_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = random_plane(&mut rng, 300, 80.0);
        let gt = random_plane(&mut rng, 300, 80.0);
        let w: Vec<f64> = (0..300).map(|_| rng.random_range(0.1..3.0)).collect();
        let c = auc_cmf(&pred, &gt, Some(&w)).unwrap();
        let (acc, auc) = oracle(&pred, &gt, Some(&w));
        for (x, y) in c.accuracy.iter().zip(&acc) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((c.auc - auc).abs() < 1e-10);
    }

    #[test]
    fn dimension_mismatch() {
        let a = ChromaPlane::filled(2, 2, [0.0, 0.0]).unwrap();
        let b = ChromaPlane::filled(4, 1, [0.0, 0.0]).unwrap();
        assert!(auc_cmf(&a, &b, None).is_err());
    }

    #[test]
    fn uniform_prior_rebalanced_equals_plain() {
        let bins = build_gamut(10.0).unwrap();
        let priors = PriorWeights::uniform(&bins);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pred = random_plane(&mut rng, 500, 90.0);
        let gt = random_plane(&mut rng, 500, 90.0);
        assert_eq!(
            rebalanced_auc(&pred, &gt, &priors, &bins).unwrap(),
            auc_cmf(&pred, &gt, None).unwrap()
        );
    }

    // Fixture: mostly gray ground truth with a few saturated pixels, under a
    // prior dominated by gray. A gray predictor nails the common pixels and
    // misses every saturated one.
    #[test]
    fn class_balance_penalizes_gray_predictions() {
        let bins = build_gamut(10.0).unwrap();
        let q = bins.len();
        let origin = bins.at_lattice(0, 0).unwrap();
        let mut p = vec![0.1 / (q - 1) as f64; q];
        p[origin] = 0.9;
        let priors = PriorWeights {
            weights: crate::rebalance::compute_weights(&p, 0.5).unwrap(),
            weights_lambda0: Some(crate::rebalance::compute_weights(&p, 0.0).unwrap()),
            smoothed_prior: p.clone(),
            prior: p,
            ..PriorWeights::uniform(&bins)
        };
        let n = 100;
        let mut ga = vec![0.0f32; n];
        let mut gb = vec![0.0f32; n];
        for i in 0..10 {
            ga[i] = 60.0;
            gb[i] = 40.0;
        }
        let gt = plane(ga, gb);
        let gray = ChromaPlane::filled(n, 1, [0.0, 0.0]).unwrap();
        let plain = auc_cmf(&gray, &gt, None).unwrap();
        let balanced = rebalanced_auc(&gray, &gt, &priors, &bins).unwrap();
        let w = class_balance_weights(&gt, &priors, &bins).unwrap();
        let (_, oracle_auc) = oracle(&gray, &gt, Some(&w));
        assert!((balanced.auc - oracle_auc).abs() < 1e-10);
        assert!(balanced.auc < plain.auc, "{} vs {}", balanced.auc, plain.auc);
        assert!((w.iter().sum::<f64>() / n as f64 - 1.0).abs() < 1e-12);

        let no_w0 = PriorWeights { weights_lambda0: None, ..priors };
        assert!(rebalanced_auc(&gray, &gt, &no_w0, &bins).is_err());
    }

    #[test]
    fn chroma_statistics() {
        assert_eq!(mean_chroma(&ChromaPlane::filled(3, 3, [0.0, 0.0]).unwrap()), 0.0);
        assert_eq!(mean_chroma(&ChromaPlane::filled(3, 3, [30.0, 40.0]).unwrap()), 50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = random_plane(&mut rng, 64, 100.0);
        let mut s = 0.0;
        for i in 0..64 {
            let [a, b] = y.get(i);
            s += ((a * a + b * b) as f64).sqrt();
        }
        assert!((mean_chroma(&y) - s / 64.0).abs() < 1e-5);
    }

    #[test]
    fn bootstrap_degenerate_samples() {
        let z = bootstrap_mean_se(&[false; 40], 1000, 1).unwrap();
        assert_eq!((z.mean, z.se), (0.0, 0.0));
        let o = bootstrap_mean_se(&[true; 40], 1000, 1).unwrap();
        assert_eq!((o.mean, o.se), (1.0, 0.0));
        assert!(bootstrap_mean_se(&[], 1000, 1).is_err());
    }

    #[test]
    fn bootstrap_se_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws: Vec<bool> = (0..500).map(|_| rng.random::<f64>() < 0.32).collect();
        let est = bootstrap_mean_se(&draws, DEFAULT_RESAMPLES, 7).unwrap();
        let p = est.mean;
        let analytic = (p * (1.0 - p) / 500.0).sqrt();
        assert!((est.se / analytic - 1.0).abs() < 0.15, "{} vs {analytic}", est.se);
        assert_eq!(est, bootstrap_mean_se(&draws, DEFAULT_RESAMPLES, 7).unwrap());
    }

    #[test]
    fn bootstrap_converges_with_more_resamples() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let draws: Vec<bool> = (0..400).map(|_| rng.random::<f64>() < 0.4).collect();
        let a = bootstrap_mean_se(&draws, 10_000, 11).unwrap();
        let b = bootstrap_mean_se(&draws, 20_000, 12).unwrap();
        assert!((a.se / b.se - 1.0).abs() < 0.05);
    }

    #[test]
    fn bootstrap_comparisons() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let s: Vec<bool> = (0..100).map(|_| rng.random::<bool>()).collect();
        assert!(bootstrap_compare(&s, &s, 2000, 1).unwrap() > 0.99);
        let zeros = vec![false; 100];
        let ones = vec![true; 100];
        assert!(bootstrap_compare(&zeros, &ones, DEFAULT_RESAMPLES, 1).unwrap() < 0.001);
        let t: Vec<bool> = (0..80).map(|_| rng.random::<f64>() < 0.3).collect();
        assert_eq!(
            bootstrap_compare(&s, &t, 2000, 5).unwrap(),
            bootstrap_compare(&t, &s, 2000, 5).unwrap()
        );
    }

    proptest! {
        #[test]
        fn curve_is_monotone_and_rotation_invariant(seed: u64, angle in 0.0f64..std::f64::consts::TAU) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred = random_plane(&mut rng, 50, 100.0);
            let gt = random_plane(&mut rng, 50, 100.0);
            let c = auc_cmf(&pred, &gt, None).unwrap();
            prop_assert!(c.accuracy.windows(2).all(|p| p[0] <= p[1]));
            prop_assert!((0.0..=100.0).contains(&c.auc));
            let rotate = |y: &ChromaPlane| {
                let (s, co) = angle.sin_cos();
                let (a, b): (Vec<f32>, Vec<f32>) = y.iter().map(|[a, b]| {
                    let (a, b) = (a as f64, b as f64);
                    ((co * a - s * b) as f32, (s * a + co * b) as f32)
                }).unzip();
                plane(a, b)
            };
            let r = auc_cmf(&rotate(&pred), &rotate(&gt), None).unwrap();
            // f32 storage of rotated values can move a distance across an
            // integer threshold; allow one pixel of slack per threshold.
            for (x, y) in c.accuracy.iter().zip(&r.accuracy) {
                prop_assert!((x - y).abs() <= 1.0 / 50.0 + 1e-12);
            }
        }
    }
}
