//! sRGB (8-bit, D65) <-> CIE 1976 L*a*b* conversion.
//!
//! All arithmetic is carried out in `f64`; planes are stored as `f32`. The
//! reference white is the row sum of the sRGB->XYZ matrix, so pure white maps
//! to `a = b = 0` without residual tint.

use std::sync::OnceLock;

use crate::{Error, Result};

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

// Cached inverse of SRGB_TO_XYZ and the white point.
struct Constants {
    xyz_to_srgb: [[f64; 3]; 3],
    white: [f64; 3],
    decode_lut: [f64; 256],
}

fn constants() -> &'static Constants {
    static CONSTANTS: OnceLock<Constants> = OnceLock::new();
    CONSTANTS.get_or_init(|| {
        let m = SRGB_TO_XYZ;
        let white = [
            m[0][0] + m[0][1] + m[0][2],
            m[1][0] + m[1][1] + m[1][2],
            m[2][0] + m[2][1] + m[2][2],
        ];
        let mut decode_lut = [0.0; 256];
        for (v, slot) in decode_lut.iter_mut().enumerate() {
            *slot = srgb_decode(v as f64 / 255.0);
        }
        Constants {
            xyz_to_srgb: invert3(&m),
            white,
            decode_lut,
        }
    })
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv = 1.0 / det;
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
        ],
    ]
}

/// sRGB transfer function, encoded value in [0, 1] to linear light.
pub fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse of [`srgb_decode`]. Negative inputs are mirrored so the curve is
/// odd-symmetric, which keeps out-of-gamut values ordered before clipping.
pub fn srgb_encode(v: f64) -> f64 {
    if v < 0.0 {
        -srgb_encode(-v)
    } else if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// Linear-light sRGB triple to Lab.
pub fn linear_rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let c = constants();
    let m = &SRGB_TO_XYZ;
    let x = m[0][0] * rgb[0] + m[0][1] * rgb[1] + m[0][2] * rgb[2];
    let y = m[1][0] * rgb[0] + m[1][1] * rgb[1] + m[1][2] * rgb[2];
    let z = m[2][0] * rgb[0] + m[2][1] * rgb[1] + m[2][2] * rgb[2];
    let fx = lab_f(x / c.white[0]);
    let fy = lab_f(y / c.white[1]);
    let fz = lab_f(z / c.white[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Lab to linear-light sRGB, without any clipping. Channels outside [0, 1]
/// indicate an out-of-gamut color.
pub fn lab_to_linear_rgb(lab: [f64; 3]) -> [f64; 3] {
    let c = constants();
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let x = lab_f_inv(fx) * c.white[0];
    let y = lab_f_inv(fy) * c.white[1];
    let z = lab_f_inv(fz) * c.white[2];
    let m = &c.xyz_to_srgb;
    [
        m[0][0] * x + m[0][1] * y + m[0][2] * z,
        m[1][0] * x + m[1][1] * y + m[1][2] * z,
        m[2][0] * x + m[2][1] * y + m[2][2] * z,
    ]
}

/// One 8-bit sRGB pixel to Lab.
pub fn srgb8_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lut = &constants().decode_lut;
    linear_rgb_to_lab([
        lut[rgb[0] as usize],
        lut[rgb[1] as usize],
        lut[rgb[2] as usize],
    ])
}

/// One Lab pixel to 8-bit sRGB: channel-wise clip to [0, 255] and round half
/// away from zero.
pub fn lab_to_srgb8(lab: [f64; 3]) -> [u8; 3] {
    let lin = lab_to_linear_rgb(lab);
    lin.map(|v| (srgb_encode(v) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn check_dims(width: usize, height: usize) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    width
        .checked_mul(height)
        .ok_or(Error::InvalidDimensions { width, height })
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Row-major interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len("rgb data", n * 3, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(n * 3).collect(),
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let n = check_dims(width, height)?;
        let mut data = Vec::with_capacity(n * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// Single-channel float plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LightnessPlane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl LightnessPlane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len("lightness plane", n, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// The two chroma channels (`a`, `b`) of a Lab image.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaPlane {
    width: usize,
    height: usize,
    a: Vec<f32>,
    b: Vec<f32>,
}

impl ChromaPlane {
    pub fn new(width: usize, height: usize, a: Vec<f32>, b: Vec<f32>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len("a plane", n, a.len())?;
        check_len("b plane", n, b.len())?;
        Ok(Self {
            width,
            height,
            a,
            b,
        })
    }

    pub fn filled(width: usize, height: usize, ab: [f32; 2]) -> Result<Self> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            a: vec![ab[0]; n],
            b: vec![ab[1]; n],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn a(&self) -> &[f32] {
        &self.a
    }

    pub fn b(&self) -> &[f32] {
        &self.b
    }

    pub fn get(&self, i: usize) -> [f32; 2] {
        [self.a[i], self.b[i]]
    }

    pub fn iter(&self) -> impl Iterator<Item = [f32; 2]> + '_ {
        self.a.iter().zip(&self.b).map(|(&a, &b)| [a, b])
    }

    pub fn into_parts(self) -> (Vec<f32>, Vec<f32>) {
        (self.a, self.b)
    }

    /// Block-average downsampling by an integer factor in each direction.
    pub fn downsample_area(&self, factor: usize) -> Result<ChromaPlane> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::param(
                "factor",
                format!(
                    "{factor} does not divide {}x{}",
                    self.width, self.height
                ),
            ));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut a = Vec::with_capacity(w * h);
        let mut b = Vec::with_capacity(w * h);
        for by in 0..h {
            for bx in 0..w {
                let (mut sa, mut sb) = (0.0f64, 0.0f64);
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        let i = y * self.width + x;
                        sa += self.a[i] as f64;
                        sb += self.b[i] as f64;
                    }
                }
                a.push((sa * norm) as f32);
                b.push((sb * norm) as f32);
            }
        }
        ChromaPlane::new(w, h, a, b)
    }
}

/// Planar CIE Lab image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    l: Vec<f32>,
    a: Vec<f32>,
    b: Vec<f32>,
}

impl LabImage {
    pub fn new(width: usize, height: usize, l: Vec<f32>, a: Vec<f32>, b: Vec<f32>) -> Result<Self> {
        let n = check_dims(width, height)?;
        check_len("L plane", n, l.len())?;
        check_len("a plane", n, a.len())?;
        check_len("b plane", n, b.len())?;
        Ok(Self {
            width,
            height,
            l,
            a,
            b,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn l(&self) -> &[f32] {
        &self.l
    }

    pub fn a(&self) -> &[f32] {
        &self.a
    }

    pub fn b(&self) -> &[f32] {
        &self.b
    }

    pub fn pixel(&self, i: usize) -> [f32; 3] {
        [self.l[i], self.a[i], self.b[i]]
    }
}

/// Converts an 8-bit sRGB image to Lab.
pub fn srgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.width * img.height;
    let (mut l, mut a, mut b) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for px in img.pixels() {
        let lab = srgb8_to_lab(px);
        l.push(lab[0] as f32);
        a.push(lab[1] as f32);
        b.push(lab[2] as f32);
    }
    LabImage {
        width: img.width,
        height: img.height,
        l,
        a,
        b,
    }
}

/// Renders a Lab image to 8-bit sRGB, clipping out-of-gamut channels.
pub fn lab_to_srgb(img: &LabImage) -> RgbImage {
    let mut data = Vec::with_capacity(img.l.len() * 3);
    for i in 0..img.l.len() {
        let rgb = lab_to_srgb8([img.l[i] as f64, img.a[i] as f64, img.b[i] as f64]);
        data.extend_from_slice(&rgb);
    }
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Splits a Lab image into the lightness input and the chroma target.
pub fn split_channels(img: &LabImage) -> (LightnessPlane, ChromaPlane) {
    (
        LightnessPlane {
            width: img.width,
            height: img.height,
            data: img.l.clone(),
        },
        ChromaPlane {
            width: img.width,
            height: img.height,
            a: img.a.clone(),
            b: img.b.clone(),
        },
    )
}

/// Inverse of [`split_channels`].
pub fn recombine(l: &LightnessPlane, ab: &ChromaPlane) -> Result<LabImage> {
    if l.width != ab.width || l.height != ab.height {
        return Err(Error::DimensionMismatch(format!(
            "lightness {}x{} vs chroma {}x{}",
            l.width, l.height, ab.width, ab.height
        )));
    }
    Ok(LabImage {
        width: l.width,
        height: l.height,
        l: l.data.clone(),
        a: ab.a.clone(),
        b: ab.b.clone(),
    })
}

/// Lab image with the chroma removed, i.e. what a grayscale input looks like.
pub fn desaturate(img: &LabImage) -> LabImage {
    LabImage {
        width: img.width,
        height: img.height,
        l: img.l.clone(),
        a: vec![0.0; img.l.len()],
        b: vec![0.0; img.l.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent scalar reference: textbook constants, explicit D65 white,
    // no lookup table or cached inverse.
    fn reference_lab(rgb: [u8; 3]) -> [f64; 3] {
        let lin = |c: u8| {
            let v = c as f64 / 255.0;
            if v <= 0.04045 {
                v / 12.92
            } else {
                ((v + 0.055) / 1.055).powf(2.4)
            }
        };
        let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
        let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
        let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
        let f = |t: f64| {
            if t > 216.0 / 24389.0 {
                t.powf(1.0 / 3.0)
            } else {
                (24389.0 / 27.0 * t + 16.0) / 116.0
            }
        };
        [
            116.0 * f(y) - 16.0,
            500.0 * (f(x) - f(y)),
            200.0 * (f(y) - f(z)),
        ]
    }

    #[test]
    fn white_and_black() {
        let w = srgb8_to_lab([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 1e-9);
        assert!(w[1].abs() < 1e-9 && w[2].abs() < 1e-9);
        let k = srgb8_to_lab([0, 0, 0]);
        assert_eq!(k, [0.0, 0.0, 0.0]);
        assert_eq!(lab_to_srgb8([100.0, 0.0, 0.0]), [255, 255, 255]);
    }

    #[test]
    fn blue_matches_reference() {
        let lab = srgb8_to_lab([0, 0, 255]);
        let r = reference_lab([0, 0, 255]);
        for (x, y) in lab.iter().zip(&r) {
            assert!((x - y).abs() < 0.05, "{lab:?} vs {r:?}");
        }
        assert!((lab[0] - 32.30).abs() < 0.05);
        assert!((lab[1] - 79.19).abs() < 0.05);
        assert!((lab[2] + 107.86).abs() < 0.05);
    }

    #[test]
    fn out_of_gamut_is_clipped() {
        let lin = lab_to_linear_rgb([50.0, 120.0, 0.0]);
        assert!(lin[1] < 0.0, "green should be negative pre-clip: {lin:?}");
        let rgb = lab_to_srgb8([50.0, 120.0, 0.0]);
        assert!(rgb.contains(&0) || rgb.contains(&255));
    }

    #[test]
    fn gray_is_neutral_and_monotone() {
        let mut last = -1.0;
        for k in 0..=255u8 {
            let lab = srgb8_to_lab([k, k, k]);
            assert!(lab[1].abs() < 0.5 && lab[2].abs() < 0.5);
            assert!(lab[0] > last);
            last = lab[0];
        }
    }

    #[test]
    fn split_and_recombine() {
        let img = RgbImage::from_fn(5, 3, |x, y| [(x * 40) as u8, (y * 70) as u8, 200]).unwrap();
        let lab = srgb_to_lab(&img);
        let (l, ab) = split_channels(&lab);
        assert_eq!((l.width(), l.height()), (5, 3));
        assert_eq!((ab.width(), ab.height()), (5, 3));
        assert_eq!(recombine(&l, &ab).unwrap(), lab);
        let bad = LightnessPlane::new(3, 5, vec![0.0; 15]).unwrap();
        assert!(recombine(&bad, &ab).is_err());
    }

    #[test]
    fn invalid_images() {
        assert!(RgbImage::new(0, 1, vec![]).is_err());
        assert!(RgbImage::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn downsample_area_averages_blocks() {
        let a: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let ab = ChromaPlane::new(4, 4, a, vec![2.0; 16]).unwrap();
        let d = ab.downsample_area(2).unwrap();
        assert_eq!(d.a(), &[2.5, 4.5, 10.5, 12.5]);
        assert_eq!(d.b(), &[2.0; 4]);
        assert!(ab.downsample_area(3).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(r: u8, g: u8, b: u8) {
            let img = RgbImage::new(1, 1, vec![r, g, b]).unwrap();
            prop_assert_eq!(lab_to_srgb(&srgb_to_lab(&img)), img);
        }

        #[test]
        fn agrees_with_reference(r: u8, g: u8, b: u8) {
            let lab = srgb8_to_lab([r, g, b]);
            let reference = reference_lab([r, g, b]);
            for (x, y) in lab.iter().zip(&reference) {
                prop_assert!((x - y).abs() < 1e-3);
            }
        }

        #[test]
        fn conversion_is_pixelwise(data in proptest::collection::vec(any::<u8>(), 12), shift in 0usize..4) {
            let img = RgbImage::new(4, 1, data.clone()).unwrap();
            let mut rotated = data.clone();
            rotated.rotate_left(shift * 3);
            let rot = RgbImage::new(4, 1, rotated).unwrap();
            let lab = srgb_to_lab(&img);
            let lab_rot = srgb_to_lab(&rot);
            for i in 0..4 {
                prop_assert_eq!(lab_rot.pixel(i), lab.pixel((i + shift) % 4));
            }
        }
    }
}
