//! Quantized `ab` output space: gamut bins, soft-encoding of chroma targets and
//! decoding of predicted distributions.

use std::sync::{Mutex, OnceLock};

use crate::colorspace::{srgb8_to_lab, ChromaPlane};
use crate::{Error, Result};

/// Lattice extent in ab units; no sRGB color has |a| or |b| beyond it.
pub const LATTICE_BOUND: f64 = 110.0;
pub const DEFAULT_GRID_STEP: f64 = 10.0;
pub const DEFAULT_NEIGHBORS: usize = 5;
pub const DEFAULT_SOFT_SIGMA: f64 = 5.0;
pub const DEFAULT_TEMPERATURE: f64 = 0.38;
/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-40;

/// The in-gamut centers of a regular `ab` lattice, sorted by `(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GamutBins {
    grid_step: f64,
    centers: Vec<[f64; 2]>,
    // Dense map from lattice coordinates to bin index.
    half_span: i64,
    lookup: Vec<Option<u32>>,
}

impl GamutBins {
    /// Builds bins from explicit lattice centers (e.g. read from a priors file).
    pub fn from_centers(grid_step: f64, centers: Vec<[f64; 2]>) -> Result<Self> {
        if !(grid_step.is_finite() && grid_step > 0.0) {
            return Err(Error::param("grid_step", format!("{grid_step} must be > 0")));
        }
        if centers.is_empty() {
            return Err(Error::EmptyGamut(grid_step));
        }
        let half_span = (LATTICE_BOUND / grid_step).floor() as i64;
        let side = (2 * half_span + 1) as usize;
        let mut lookup = vec![None; side * side];
        let mut prev: Option<(i64, i64)> = None;
        for (q, c) in centers.iter().enumerate() {
            let ia = (c[0] / grid_step).round() as i64;
            let ib = (c[1] / grid_step).round() as i64;
            if ia as f64 * grid_step != c[0] || ib as f64 * grid_step != c[1] {
                return Err(Error::param(
                    "centers",
                    format!("({}, {}) is not on the step-{grid_step} lattice", c[0], c[1]),
                ));
            }
            if ia.abs() > half_span || ib.abs() > half_span {
                return Err(Error::param(
                    "centers",
                    format!("({}, {}) lies outside the lattice bound", c[0], c[1]),
                ));
            }
            if prev.is_some_and(|p| p >= (ia, ib)) {
                return Err(Error::param("centers", "centers must be unique and sorted by (a, b)"));
            }
            prev = Some((ia, ib));
            let slot = ((ia + half_span) as usize) * side + (ib + half_span) as usize;
            lookup[slot] = Some(q as u32);
        }
        Ok(Self {
            grid_step,
            centers,
            half_span,
            lookup,
        })
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    /// Number of bins, Q.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn center(&self, q: usize) -> [f64; 2] {
        self.centers[q]
    }

    /// Half-width of the lattice in cells (lattice indices run over
    /// `-half_span..=half_span` on each axis).
    pub fn half_span(&self) -> i64 {
        self.half_span
    }

    /// Bin index at integer lattice coordinates, if that cell is in gamut.
    pub fn at_lattice(&self, ia: i64, ib: i64) -> Option<usize> {
        if ia.abs() > self.half_span || ib.abs() > self.half_span {
            return None;
        }
        let side = (2 * self.half_span + 1) as usize;
        let slot = ((ia + self.half_span) as usize) * side + (ib + self.half_span) as usize;
        self.lookup[slot].map(|q| q as usize)
    }

    /// Index of the Euclidean-nearest center; ties go to the smallest index.
    pub fn nearest(&self, a: f64, b: f64) -> usize {
        // Rounding half toward -inf on each axis picks the lexicographically
        // smallest of equidistant lattice points.
        let ia = (a / self.grid_step - 0.5).ceil();
        let ib = (b / self.grid_step - 0.5).ceil();
        if ia.is_finite() && ib.is_finite() {
            if let Some(q) = self.at_lattice(ia as i64, ib as i64) {
                return q;
            }
        }
        self.nearest_scan(a, b)
    }

    fn nearest_scan(&self, a: f64, b: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (q, c) in self.centers.iter().enumerate() {
            let d = (a - c[0]).powi(2) + (b - c[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
        best
    }

    /// The `k` nearest centers as `(index, squared distance)`, ordered by
    /// distance then index.
    pub fn k_nearest(&self, a: f64, b: f64, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.centers.len());
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        for (q, c) in self.centers.iter().enumerate() {
            let d = (a - c[0]).powi(2) + (b - c[1]).powi(2);
            if best.len() == k && d >= best[k - 1].1 {
                continue;
            }
            // Insert after any equal distances so lower indices stay first.
            let pos = best.partition_point(|&(_, bd)| bd <= d);
            best.insert(pos, (q, d));
            best.truncate(k);
        }
        best
    }
}

// build_gamut sweeps all 2^24 colors; cache by step.
fn gamut_cache() -> &'static Mutex<Vec<(u64, GamutBins)>> {
    static CACHE: OnceLock<Mutex<Vec<(u64, GamutBins)>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(Vec::new()))
}

/// Enumerates the in-gamut `ab` bins of a lattice with spacing `grid_step`.
///
/// A lattice center `(ca, cb)` is in gamut when some 8-bit sRGB color has
/// chroma within one grid step of it on both axes, `|a - ca| < step` and
/// `|b - cb| < step`. Equivalently, the center is a corner of a lattice cell
/// that contains a realizable chroma value. Centers are restricted to
/// `|a|, |b| <= 110`.
pub fn build_gamut(grid_step: f64) -> Result<GamutBins> {
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::param("grid_step", format!("{grid_step} must be > 0")));
    }
    let key = grid_step.to_bits();
    if let Some((_, bins)) = gamut_cache()
        .lock()
        .expect("gamut cache poisoned")
        .iter()
        .find(|(k, _)| *k == key)
    {
        return Ok(bins.clone());
    }

    let half_span = (LATTICE_BOUND / grid_step).floor() as i64;
    let side = (2 * half_span + 1) as usize;
    let mut occupied = vec![false; side * side];
    for r in 0..=255u8 {
        for g in 0..=255u8 {
            for b in 0..=255u8 {
                let lab = srgb8_to_lab([r, g, b]);
                let (ta, tb) = (lab[1] / grid_step, lab[2] / grid_step);
                for ia in [ta.floor(), ta.ceil()] {
                    for ib in [tb.floor(), tb.ceil()] {
                        let (ia, ib) = (ia as i64, ib as i64);
                        if ia.abs() <= half_span && ib.abs() <= half_span {
                            let slot = (ia + half_span) as usize * side + (ib + half_span) as usize;
                            occupied[slot] = true;
                        }
                    }
                }
            }
        }
    }
    // Row-major over (a, b) is already lexicographic order.
    let centers: Vec<[f64; 2]> = occupied
        .iter()
        .enumerate()
        .filter(|(_, &hit)| hit)
        .map(|(slot, _)| {
            let ia = (slot / side) as i64 - half_span;
            let ib = (slot % side) as i64 - half_span;
            [ia as f64 * grid_step, ib as f64 * grid_step]
        })
        .collect();
    if centers.is_empty() {
        return Err(Error::EmptyGamut(grid_step));
    }
    let bins = GamutBins::from_centers(grid_step, centers)?;
    gamut_cache()
        .lock()
        .expect("gamut cache poisoned")
        .push((key, bins.clone()));
    Ok(bins)
}

/// Index of the nearest bin center to `ab`.
pub fn nearest_bin(ab: [f32; 2], bins: &GamutBins) -> usize {
    bins.nearest(ab[0] as f64, ab[1] as f64)
}

/// Dense per-pixel distribution over the Q bins, laid out `height x width x Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorDistribution {
    width: usize,
    height: usize,
    q: usize,
    probs: Vec<f32>,
}

impl ColorDistribution {
    pub fn new(width: usize, height: usize, q: usize, probs: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || q == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        let expected = width * height * q;
        if probs.len() != expected {
            return Err(Error::LengthMismatch {
                what: "distribution",
                expected,
                actual: probs.len(),
            });
        }
        Ok(Self {
            width,
            height,
            q,
            probs,
        })
    }

    /// Uniform distribution at every pixel.
    pub fn uniform(width: usize, height: usize, q: usize) -> Result<Self> {
        Self::new(width, height, q, vec![1.0 / q as f32; width * height * q])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.probs[i * self.q..(i + 1) * self.q]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.probs.chunks_exact(self.q)
    }

    fn check_bins(&self, bins: &GamutBins) -> Result<()> {
        if self.q != bins.len() {
            return Err(Error::DimensionMismatch(format!(
                "distribution has {} bins, gamut has {}",
                self.q,
                bins.len()
            )));
        }
        Ok(())
    }
}

/// Soft-encoded targets kept sparse: `k` (bin, weight) pairs per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDistribution {
    width: usize,
    height: usize,
    q: usize,
    k: usize,
    indices: Vec<u32>,
    weights: Vec<f32>,
}

impl SparseDistribution {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The `(bin, weight)` entries of pixel `i`, nearest bin first.
    pub fn pixel(&self, i: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let r = i * self.k..(i + 1) * self.k;
        self.indices[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&q, &w)| (q as usize, w))
    }

    /// Nearest (modal) bin of pixel `i`.
    pub fn modal_bin(&self, i: usize) -> usize {
        self.indices[i * self.k] as usize
    }

    pub fn to_dense(&self) -> ColorDistribution {
        let n = self.width * self.height;
        let mut probs = vec![0.0f32; n * self.q];
        for i in 0..n {
            for (q, w) in self.pixel(i) {
                probs[i * self.q + q] = w;
            }
        }
        ColorDistribution {
            width: self.width,
            height: self.height,
            q: self.q,
            probs,
        }
    }
}

/// Soft-encodes chroma onto its `k` nearest bins with a Gaussian kernel of
/// width `sigma` (ab units), keeping the result sparse.
pub fn encode_soft_sparse(
    y: &ChromaPlane,
    bins: &GamutBins,
    k: usize,
    sigma: f64,
) -> Result<SparseDistribution> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param("sigma", format!("{sigma} must be > 0")));
    }
    let k = k.min(bins.len());
    let n = y.len();
    let mut indices = Vec::with_capacity(n * k);
    let mut weights = Vec::with_capacity(n * k);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut kernel = vec![0.0f64; k];
    for [a, b] in y.iter() {
        let near = bins.k_nearest(a as f64, b as f64, k);
        // Distances are taken relative to the nearest bin, so the largest
        // kernel value is exactly 1 and far-away pixels cannot underflow.
        let d0 = near[0].1;
        for (slot, &(_, d)) in kernel.iter_mut().zip(&near) {
            *slot = (-(d - d0) * inv).exp();
        }
        let total: f64 = kernel.iter().sum();
        for (&(q, _), &kv) in near.iter().zip(&kernel) {
            indices.push(q as u32);
            weights.push((kv / total) as f32);
        }
    }
    Ok(SparseDistribution {
        width: y.width(),
        height: y.height(),
        q: bins.len(),
        k,
        indices,
        weights,
    })
}

/// Dense soft-encoding of a chroma plane.
pub fn encode_soft(
    y: &ChromaPlane,
    bins: &GamutBins,
    k: usize,
    sigma: f64,
) -> Result<ColorDistribution> {
    Ok(encode_soft_sparse(y, bins, k, sigma)?.to_dense())
}

/// One-hot encoding at the nearest bin.
pub fn encode_onehot(y: &ChromaPlane, bins: &GamutBins) -> ColorDistribution {
    let q = bins.len();
    let mut probs = vec![0.0f32; y.len() * q];
    for (i, ab) in y.iter().enumerate() {
        probs[i * q + nearest_bin(ab, bins)] = 1.0;
    }
    ColorDistribution {
        width: y.width(),
        height: y.height(),
        q,
        probs,
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::param(
            "temperature",
            format!("{t} must lie in (0, 1]; use decode_mode for the T -> 0 limit"),
        ));
    }
    Ok(())
}

/// The temperature-adjusted distribution `f_T(z) ∝ exp(log z / T)`.
pub fn annealed_distribution(z: &[f32], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    let mut out = vec![0.0; z.len()];
    anneal_into(z, t, &mut out);
    Ok(out)
}

fn anneal_into(z: &[f32], t: f64, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (o, &p) in out.iter_mut().zip(z) {
        *o = (p as f64).max(PROB_FLOOR).ln() / t;
        max = max.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Annealed-mean point estimate: the expectation of the bin centers under
/// `f_T` of each pixel's distribution.
pub fn decode_annealed_mean(zhat: &ColorDistribution, bins: &GamutBins, t: f64) -> Result<ChromaPlane> {
    check_temperature(t)?;
    zhat.check_bins(bins)?;
    let n = zhat.pixel_count();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut f = vec![0.0; zhat.q];
    for z in zhat.pixels() {
        anneal_into(z, t, &mut f);
        let (mut sa, mut sb) = (0.0, 0.0);
        for (w, c) in f.iter().zip(bins.centers()) {
            sa += w * c[0];
            sb += w * c[1];
        }
        a.push(sa as f32);
        b.push(sb as f32);
    }
    ChromaPlane::new(zhat.width, zhat.height, a, b)
}

/// Index of the largest entry, ties to the smallest index.
pub fn argmax(z: &[f32]) -> usize {
    let mut best = 0;
    for (q, &p) in z.iter().enumerate() {
        if p > z[best] {
            best = q;
        }
    }
    best
}

/// Per-pixel mode of the distribution.
pub fn decode_mode(zhat: &ColorDistribution, bins: &GamutBins) -> Result<ChromaPlane> {
    zhat.check_bins(bins)?;
    let (a, b): (Vec<f32>, Vec<f32>) = zhat
        .pixels()
        .map(|z| {
            let c = bins.center(argmax(z));
            (c[0] as f32, c[1] as f32)
        })
        .unzip();
    ChromaPlane::new(zhat.width, zhat.height, a, b)
}

/// Per-bin probability planes for a subsampled set of bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMaps {
    pub width: usize,
    pub height: usize,
    /// Bin indices included, in increasing order.
    pub bins: Vec<usize>,
    pub centers: Vec<[f64; 2]>,
    /// One row-major plane per entry of `bins`.
    pub planes: Vec<Vec<f32>>,
}

/// Extracts the probability plane of every `stride`-th bin.
pub fn export_probability_maps(
    zhat: &ColorDistribution,
    bins: &GamutBins,
    stride: usize,
) -> Result<ProbabilityMaps> {
    if stride == 0 {
        return Err(Error::param("stride", "must be at least 1"));
    }
    zhat.check_bins(bins)?;
    let selected: Vec<usize> = (0..zhat.q).step_by(stride).collect();
    let planes = selected
        .iter()
        .map(|&q| zhat.pixels().map(|z| z[q]).collect())
        .collect();
    Ok(ProbabilityMaps {
        width: zhat.width,
        height: zhat.height,
        centers: selected.iter().map(|&q| bins.center(q)).collect(),
        bins: selected,
        planes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::lab_to_linear_rgb;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bins() -> GamutBins {
        build_gamut(DEFAULT_GRID_STEP).unwrap()
    }

    fn brute_nearest(bins: &GamutBins, a: f64, b: f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (q, c) in bins.centers().iter().enumerate() {
            let d = (a - c[0]) * (a - c[0]) + (b - c[1]) * (b - c[1]);
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }

    fn single(ab: [f32; 2]) -> ChromaPlane {
        ChromaPlane::new(1, 1, vec![ab[0]], vec![ab[1]]).unwrap()
    }

    #[test]
    fn gamut_shape() {
        let bins = bins();
        assert!((300..=326).contains(&bins.len()), "Q = {}", bins.len());
        assert!(bins.at_lattice(0, 0).is_some());
        assert!(bins.at_lattice(11, 11).is_none());
        let mut sorted = bins.centers().to_vec();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        sorted.dedup();
        assert_eq!(sorted, bins.centers());
        for c in bins.centers() {
            assert_eq!(c[0] % 10.0, 0.0);
            assert_eq!(c[1] % 10.0, 0.0);
        }
        assert!(build_gamut(0.0).is_err());
    }

    #[test]
    fn far_corner_has_no_valid_lightness() {
        for l in 0..=100 {
            let rgb = lab_to_linear_rgb([l as f64, 110.0, 110.0]);
            assert!(rgb.iter().any(|&c| !(-1e-3..=1.0 + 1e-3).contains(&c)));
        }
    }

    #[test]
    fn nearest_midpoints() {
        let bins = bins();
        let origin = bins.at_lattice(0, 0).unwrap();
        assert_eq!(nearest_bin([0.0, 0.0], &bins), origin);
        assert_eq!(nearest_bin([4.9, 0.0], &bins), origin);
        assert_eq!(nearest_bin([5.1, 0.0], &bins), bins.at_lattice(1, 0).unwrap());
        // exact tie goes to the smaller index
        assert_eq!(nearest_bin([5.0, 0.0], &bins), origin);
        assert_eq!(nearest_bin([-5.0, 0.0], &bins), bins.at_lattice(-1, 0).unwrap());
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let bins = bins();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let a: f32 = rng.random_range(-130.0..130.0);
            let b: f32 = rng.random_range(-130.0..130.0);
            assert_eq!(
                nearest_bin([a, b], &bins),
                brute_nearest(&bins, a as f64, b as f64),
                "({a}, {b})"
            );
        }
    }

    #[test]
    fn soft_encoding_at_center() {
        let bins = bins();
        let z = encode_soft(&single([0.0, 0.0]), &bins, 5, 5.0).unwrap();
        let p = z.pixel(0);
        let origin = bins.at_lattice(0, 0).unwrap();
        assert!((p[origin] - 0.64879).abs() < 1e-5);
        for (ia, ib) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            assert!((p[bins.at_lattice(ia, ib).unwrap()] - 0.08780).abs() < 1e-5);
        }
        assert_eq!(p.iter().filter(|&&v| v > 0.0).count(), 5);
    }

    #[test]
    fn onehot_equals_k1_soft() {
        let bins = bins();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 64;
        let a: Vec<f32> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let b: Vec<f32> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let y = ChromaPlane::new(8, 8, a, b).unwrap();
        let hot = encode_onehot(&y, &bins);
        assert_eq!(hot, encode_soft(&y, &bins, 1, 5.0).unwrap());
        for (i, z) in hot.pixels().enumerate() {
            let entropy: f64 = z
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -(p as f64) * (p as f64).ln())
                .sum();
            assert_eq!(entropy, 0.0);
            assert_eq!(argmax(z), nearest_bin(y.get(i), &bins));
        }
    }

    #[test]
    fn soft_encoding_rejects_bad_params() {
        let bins = bins();
        assert!(encode_soft(&single([0.0, 0.0]), &bins, 0, 5.0).is_err());
        assert!(encode_soft(&single([0.0, 0.0]), &bins, 5, 0.0).is_err());
    }

    #[test]
    fn far_outside_input_does_not_produce_nan() {
        let bins = bins();
        let z = encode_soft(&single([1e4, -1e4]), &bins, 5, 5.0).unwrap();
        let s: f32 = z.pixel(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }

    fn two_bin(bins: &GamutBins, p0: f32, p1: f32) -> ColorDistribution {
        let mut probs = vec![0.0; bins.len()];
        probs[bins.at_lattice(0, 0).unwrap()] = p0;
        probs[bins.at_lattice(1, 0).unwrap()] = p1;
        ColorDistribution::new(1, 1, bins.len(), probs).unwrap()
    }

    #[test]
    fn annealed_mean_two_bins() {
        let bins = bins();
        let z = two_bin(&bins, 0.75, 0.25);
        // direct evaluation: 0.75^(1/0.38) / (0.75^(1/0.38) + 0.25^(1/0.38))
        let hi = 0.75f64.powf(1.0 / 0.38);
        let lo = 0.25f64.powf(1.0 / 0.38);
        let expected = lo / (hi + lo);
        let f = annealed_distribution(z.pixel(0), 0.38).unwrap();
        assert!((f[bins.at_lattice(0, 0).unwrap()] - (1.0 - expected)).abs() < 1e-6);
        assert!((f[bins.at_lattice(1, 0).unwrap()] - expected).abs() < 1e-6);
        assert!((expected - 0.052596).abs() < 1e-6);
        let y = decode_annealed_mean(&z, &bins, 0.38).unwrap();
        assert!((y.a()[0] as f64 - 10.0 * expected).abs() < 1e-5);
        assert!(y.b()[0].abs() < 1e-4);
    }

    #[test]
    fn annealed_mean_t1_is_expectation() {
        let bins = bins();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut probs: Vec<f32> = (0..bins.len()).map(|_| rng.random::<f32>()).collect();
        let s: f32 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        let z = ColorDistribution::new(1, 1, bins.len(), probs.clone()).unwrap();
        let y = decode_annealed_mean(&z, &bins, 1.0).unwrap();
        let total: f64 = probs.iter().map(|&p| p as f64).sum();
        let ea: f64 = probs.iter().zip(bins.centers()).map(|(&p, c)| p as f64 * c[0]).sum::<f64>() / total;
        let eb: f64 = probs.iter().zip(bins.centers()).map(|(&p, c)| p as f64 * c[1]).sum::<f64>() / total;
        assert!((y.a()[0] as f64 - ea).abs() < 1e-4);
        assert!((y.b()[0] as f64 - eb).abs() < 1e-4);
    }

    #[test]
    fn low_temperature_approaches_mode() {
        let bins = bins();
        let z = two_bin(&bins, 0.6, 0.4);
        let y = decode_annealed_mean(&z, &bins, 1e-3).unwrap();
        let m = decode_mode(&z, &bins).unwrap();
        assert!((y.a()[0] - m.a()[0]).abs() < 1e-6);
        assert!((y.b()[0] - m.b()[0]).abs() < 1e-6);
        assert!(decode_annealed_mean(&z, &bins, 0.0).is_err());
        assert!(decode_annealed_mean(&z, &bins, 1.5).is_err());
    }

    #[test]
    fn mode_tie_rule() {
        let bins = bins();
        let z = ColorDistribution::uniform(1, 1, bins.len()).unwrap();
        let m = decode_mode(&z, &bins).unwrap();
        assert_eq!(m.get(0), [bins.center(0)[0] as f32, bins.center(0)[1] as f32]);
    }

    #[test]
    fn mode_is_low_temperature_limit() {
        let bins = bins();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut probs: Vec<f32> = (0..bins.len()).map(|_| rng.random::<f32>() * 0.5).collect();
            let peak = rng.random_range(0..bins.len());
            probs[peak] = 1.0;
            let s: f32 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= s);
            let z = ColorDistribution::new(1, 1, bins.len(), probs).unwrap();
            let y = decode_annealed_mean(&z, &bins, 1e-4).unwrap();
            let m = decode_mode(&z, &bins).unwrap();
            assert!((y.a()[0] - m.a()[0]).abs() < 1e-6);
            assert!((y.b()[0] - m.b()[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn probability_maps() {
        let bins = bins();
        let q = bins.len();
        let hot = encode_onehot(&ChromaPlane::filled(3, 2, [20.0, -30.0]).unwrap(), &bins);
        let maps = export_probability_maps(&hot, &bins, 1).unwrap();
        assert_eq!(maps.planes.len(), q);
        let nonzero = maps.planes.iter().filter(|p| p.iter().any(|&v| v != 0.0)).count();
        assert_eq!(nonzero, 1);

        let y = ChromaPlane::new(2, 2, vec![1.0, 22.0, -37.0, 5.5], vec![3.0, -8.0, 14.0, 60.0]).unwrap();
        let soft = encode_soft(&y, &bins, 5, 5.0).unwrap();
        let all = export_probability_maps(&soft, &bins, 1).unwrap();
        for i in 0..4 {
            let s: f32 = all.planes.iter().map(|p| p[i]).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        let sub = export_probability_maps(&soft, &bins, 7).unwrap();
        assert_eq!(sub.planes.len(), q.div_ceil(7));
        for (plane, &qi) in sub.planes.iter().zip(&sub.bins) {
            for i in 0..4 {
                assert_eq!(plane[i], soft.probs()[i * q + qi]);
            }
        }
        assert!(export_probability_maps(&soft, &bins, 0).is_err());
    }

    #[test]
    fn round_trip_error_bounded_by_grid_step() {
        // Brute force over a 1-unit lattice of chroma values inside the bin hull.
        let bins = bins();
        let mut worst = 0.0f64;
        for a in -90..=100 {
            for b in -110..=100 {
                let (a, b) = (a as f64, b as f64);
                let q = bins.nearest(a, b);
                let c = bins.center(q);
                // inside the hull: nearest center closer than one step
                if ((a - c[0]).powi(2) + (b - c[1]).powi(2)).sqrt() > bins.grid_step() / 2.0 * 2f64.sqrt() {
                    continue;
                }
                let y = single([a as f32, b as f32]);
                let z = encode_soft(&y, &bins, 5, 5.0).unwrap();
                let back = decode_annealed_mean(&z, &bins, 1.0).unwrap();
                let err = ((back.a()[0] as f64 - a).powi(2) + (back.b()[0] as f64 - b).powi(2)).sqrt();
                worst = worst.max(err);
            }
        }
        assert!(worst <= 10.0, "worst round-trip error {worst}");
    }

    // Andrew's monotone chain, counter-clockwise.
    fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
        let mut hull: Vec<[f64; 2]> = Vec::new();
        for pass in 0..2 {
            let start = hull.len();
            let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
            for &p in iter {
                while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                    hull.pop();
                }
                hull.push(p);
            }
            hull.pop();
        }
        hull
    }

    fn inside_hull(hull: &[[f64; 2]], p: [f64; 2], tol: f64) -> bool {
        (0..hull.len()).all(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) / len >= -tol
        })
    }

    #[test]
    fn hull_helper_sanity() {
        let hull = convex_hull(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]]);
        assert_eq!(hull.len(), 4);
        assert!(inside_hull(&hull, [0.5, 0.2], 0.0));
        assert!(!inside_hull(&hull, [1.5, 0.2], 0.0));
    }

    fn simplex(q: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(0.0f32..1.0, q).prop_map(|mut v| {
            v[0] += 1e-3;
            let s: f32 = v.iter().sum();
            v.iter_mut().for_each(|p| *p /= s);
            v
        })
    }

    proptest! {
        #[test]
        fn annealing_preserves_simplex(z in simplex(40), t in 0.01f64..=1.0) {
            let f = annealed_distribution(&z, t).unwrap();
            prop_assert!(f.iter().all(|&v| v >= 0.0));
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn annealing_is_scale_invariant(z in simplex(40), t in 0.05f64..=1.0, c in 0.1f32..10.0) {
            let scaled: Vec<f32> = z.iter().map(|&p| p * c).collect();
            let f = annealed_distribution(&z, t).unwrap();
            let g = annealed_distribution(&scaled, t).unwrap();
            for (x, y) in f.iter().zip(&g) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }

        #[test]
        fn soft_encoding_sums_to_one(a in -120.0f32..120.0, b in -120.0f32..120.0) {
            let bins = bins();
            let z = encode_soft(&single([a, b]), &bins, 5, 5.0).unwrap();
            let s: f32 = z.pixel(0).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
            prop_assert!(z.probs().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn annealed_mean_in_convex_hull(seed: u64, t in 0.05f64..=1.0) {
            let bins = bins();
            let hull = convex_hull(bins.centers());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut probs: Vec<f32> = (0..bins.len()).map(|_| rng.random::<f32>().powi(8)).collect();
            let s: f32 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= s);
            let z = ColorDistribution::new(1, 1, bins.len(), probs).unwrap();
            let y = decode_annealed_mean(&z, &bins, t).unwrap();
            prop_assert!(inside_hull(&hull, [y.a()[0] as f64, y.b()[0] as f64], 1e-4));
        }
    }
}
