//! Procedural training scenes: sky over grass with fruit and stones, plus
//! small swatches that between them touch every in-gamut color bin.
//!
//! Color follows structure (height in the frame, texture, brightness), so a
//! network that sees only lightness can learn part of the mapping. Some of
//! it stays ambiguous on purpose: skies are either daytime blue or sunset
//! orange, and painted objects take any hue at a fixed lightness.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chromalab_core::colorspace::{lab_to_srgb8, srgb8_to_lab, RgbImage};
use chromalab_core::ppm::write_ppm;
use chromalab_core::quantize::GamutBins;

use crate::Result;

pub const DEFAULT_COUNT: usize = 500;
pub const DEFAULT_SIZE: usize = 64;
pub const DEFAULT_SEED: u64 = 2016;

/// Swatches per image.
const SWATCHES: usize = 2;
const SWATCH_SIZE: usize = 3;

fn each_color(mut f: impl FnMut([u8; 3], f64, f64)) {
    for r in 0..=255u8 {
        for g in 0..=255u8 {
            for b in 0..=255u8 {
                let [_, la, lb] = srgb8_to_lab([r, g, b]);
                f([r, g, b], la, lb);
            }
        }
    }
}

/// For each bin, the 8-bit color whose ab lies closest to the bin center.
/// Bins that are nobody's nearest bin get the closest color overall.
pub fn gamut_palette(bins: &GamutBins) -> Vec<[u8; 3]> {
    let mut best = vec![(f64::INFINITY, [0u8; 3]); bins.len()];
    let dist = |q: usize, a: f64, b: f64| {
        let [ca, cb] = bins.center(q);
        (a - ca).powi(2) + (b - cb).powi(2)
    };
    each_color(|rgb, a, b| {
        let q = bins.nearest(a, b);
        let d = dist(q, a, b);
        if d < best[q].0 {
            best[q] = (d, rgb);
        }
    });
    let missing: Vec<usize> = (0..bins.len()).filter(|&q| best[q].0.is_infinite()).collect();
    if !missing.is_empty() {
        each_color(|rgb, a, b| {
            for &q in &missing {
                let d = dist(q, a, b);
                if d < best[q].0 {
                    best[q] = (d, rgb);
                }
            }
        });
    }
    best.into_iter().map(|(_, c)| c).collect()
}

fn clamp8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

struct Disc {
    cx: f64,
    cy: f64,
    r: f64,
    color: [f64; 3],
    textured: bool,
}

/// One scene. `palette` colors are painted as small swatches.
pub fn scene(size: usize, rng: &mut ChaCha8Rng, swatches: &[[u8; 3]]) -> RgbImage {
    let s = size as f64;
    let horizon = rng.random_range(0.3..0.7) * s;
    let (sky_top, sky_low) = if rng.random_bool(0.35) {
        (
            [rng.random_range(150.0..190.0), rng.random_range(80.0..110.0), rng.random_range(60.0..100.0)],
            [rng.random_range(240.0..255.0), rng.random_range(170.0..200.0), rng.random_range(90.0..130.0)],
        )
    } else {
        (
            [rng.random_range(40.0..80.0), rng.random_range(100.0..140.0), rng.random_range(200.0..240.0)],
            [rng.random_range(140.0..180.0), rng.random_range(180.0..210.0), rng.random_range(230.0..250.0)],
        )
    };
    let grass = [rng.random_range(40.0..90.0), rng.random_range(120.0..170.0), rng.random_range(30.0..60.0)];
    let n_discs = rng.random_range(1..=3);
    let discs: Vec<Disc> = (0..n_discs)
        .map(|_| {
            let kind: f64 = rng.random();
            let stone = kind < 0.25;
            let color = if stone {
                let g = rng.random_range(90.0..170.0);
                [g, g, g * rng.random_range(0.95..1.0)]
            } else if kind < 0.65 {
                let h = rng.random_range(0.0..std::f64::consts::TAU);
                let c = rng.random_range(35.0..55.0);
                lab_to_srgb8([60.0, c * h.cos(), c * h.sin()]).map(f64::from)
            } else if rng.random_bool(0.5) {
                [rng.random_range(220.0..250.0), rng.random_range(100.0..150.0), rng.random_range(10.0..40.0)]
            } else {
                [rng.random_range(180.0..220.0), rng.random_range(20.0..50.0), rng.random_range(30.0..60.0)]
            };
            Disc {
                cx: rng.random_range(0.15..0.85) * s,
                cy: rng.random_range(horizon.max(0.3 * s)..0.9 * s),
                r: rng.random_range(0.06..0.16) * s,
                color,
                textured: stone,
            }
        })
        .collect();
    let noise: Vec<f64> = (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spots: Vec<(usize, usize)> = swatches
        .iter()
        .map(|_| (rng.random_range(0..size - SWATCH_SIZE), rng.random_range(0..size - SWATCH_SIZE)))
        .collect();

    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let n = noise[y * size + x];
            let mut c = if fy < horizon {
                let t = fy / horizon;
                let base = mix(sky_top, sky_low, t);
                base.map(|v| v + 3.0 * n)
            } else {
                let depth = (fy - horizon) / (s - horizon).max(1.0);
                let shade = 1.0 - 0.35 * depth + 0.18 * n;
                grass.map(|v| v * shade)
            };
            for d in &discs {
                let dist = ((fx - d.cx).powi(2) + (fy - d.cy).powi(2)).sqrt();
                if dist <= d.r {
                    // Lit from the upper left.
                    let light = 1.0 - 0.3 * ((fx - d.cx) + (fy - d.cy)) / (2.0 * d.r);
                    let tex = if d.textured { 1.0 + 0.2 * n } else { 1.0 };
                    c = d.color.map(|v| v * light * tex);
                }
            }
            data.extend(c.map(clamp8));
        }
    }
    for (sw, &(sx, sy)) in swatches.iter().zip(&spots) {
        for y in sy..sy + SWATCH_SIZE {
            for x in sx..sx + SWATCH_SIZE {
                data[(y * size + x) * 3..(y * size + x) * 3 + 3].copy_from_slice(sw);
            }
        }
    }
    RgbImage::new(size, size, data).expect("scene buffer has the right length")
}

/// `count` named scenes. Swatch colors cycle through `palette`.
pub fn generate(count: usize, size: usize, seed: u64, palette: &[[u8; 3]]) -> Vec<(String, RgbImage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let sw: Vec<[u8; 3]> = if palette.is_empty() {
                Vec::new()
            } else {
                (0..SWATCHES).map(|k| palette[(i * SWATCHES + k) % palette.len()]).collect()
            };
            (format!("scene_{i:04}.ppm"), scene(size, &mut rng, &sw))
        })
        .collect()
}

/// Writes the scenes as PPM files into `dir` (created if missing).
pub fn write_fixture(dir: impl AsRef<Path>, scenes: &[(String, RgbImage)]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    for (name, img) in scenes {
        write_ppm(dir.join(name), img)?;
    }
    Ok(())
}
