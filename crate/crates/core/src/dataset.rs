//! Directory-backed image datasets and the resize/crop used to feed them.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::colorspace::RgbImage;
use crate::ppm::read_ppm;
use crate::{Error, Result};

/// Source coordinate for output sample `i` when resampling `n_in -> n_out`
/// with pixel-center alignment.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let scale = n_in as f64 / n_out as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear resampling of a single-channel plane.
pub fn resize_plane(data: &[f32], width: usize, height: usize, new_w: usize, new_h: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let (y0, y1, fy) = source_coord(y, height, new_h);
        for x in 0..new_w {
            let (x0, x1, fx) = source_coord(x, width, new_w);
            let p = |xx: usize, yy: usize| data[yy * width + xx] as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Bilinear resize of an 8-bit image; samples are rounded to nearest.
pub fn resize_bilinear(img: &RgbImage, new_w: usize, new_h: usize) -> Result<RgbImage> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::InvalidDimensions {
            width: new_w,
            height: new_h,
        });
    }
    if (new_w, new_h) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut data = Vec::with_capacity(new_w * new_h * 3);
    for y in 0..new_h {
        let (y0, y1, fy) = source_coord(y, h, new_h);
        for x in 0..new_w {
            let (x0, x1, fx) = source_coord(x, w, new_w);
            for c in 0..3 {
                let p = |xx: usize, yy: usize| src[(yy * w + xx) * 3 + c] as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                data.push((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(new_w, new_h, data)
}

pub fn center_crop(img: &RgbImage, crop_w: usize, crop_h: usize) -> Result<RgbImage> {
    if crop_w > img.width() || crop_h > img.height() || crop_w == 0 || crop_h == 0 {
        return Err(Error::param(
            "crop",
            format!("{crop_w}x{crop_h} does not fit in {}x{}", img.width(), img.height()),
        ));
    }
    let x0 = (img.width() - crop_w) / 2;
    let y0 = (img.height() - crop_h) / 2;
    RgbImage::from_fn(crop_w, crop_h, |x, y| img.pixel(x0 + x, y0 + y))
}

/// Resizes the shorter side to `size` (bilinear) and center-crops to
/// `size x size`.
pub fn fit_square(img: &RgbImage, size: usize) -> Result<RgbImage> {
    let (w, h) = (img.width(), img.height());
    let (nw, nh) = if w <= h {
        (size, ((h as f64 * size as f64 / w as f64).round() as usize).max(size))
    } else {
        (((w as f64 * size as f64 / h as f64).round() as usize).max(size), size)
    };
    center_crop(&resize_bilinear(img, nw, nh)?, size, size)
}

/// An in-memory image collection in lexicographic file order, with a seeded
/// per-epoch shuffle.
#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    images: Vec<RgbImage>,
    seed: u64,
}

impl Dataset {
    pub fn from_images(names: Vec<String>, images: Vec<RgbImage>, seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if names.len() != images.len() {
            return Err(Error::LengthMismatch {
                what: "dataset names",
                expected: images.len(),
                actual: names.len(),
            });
        }
        Ok(Self { names, images, seed })
    }

    /// Loads every `.ppm` file in `dir`, fitted to `size x size`. Unreadable
    /// files are skipped with a warning.
    pub fn load(dir: impl AsRef<Path>, size: usize, seed: u64) -> Result<Self> {
        let dir = dir.as_ref();
        if size == 0 {
            return Err(Error::param("size", "must be positive"));
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
            .collect();
        paths.sort();
        let mut names = Vec::new();
        let mut images = Vec::new();
        for path in paths {
            match read_ppm(&path).and_then(|img| fit_square(&img, size)) {
                Ok(img) => {
                    names.push(path.file_name().unwrap_or_default().to_string_lossy().into_owned());
                    images.push(img);
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Self::from_images(names, images, seed)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }

    pub fn get(&self, i: usize) -> &RgbImage {
        &self.images[i]
    }

    /// Shuffled index order for `epoch`; a pure function of seed and epoch.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        Self::order_for(self.seed, epoch, self.images.len())
    }

    /// The shuffle of `0..len` used by a dataset with `seed` in `epoch`.
    pub fn order_for(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    pub fn iter_epoch(&self, epoch: u64) -> impl Iterator<Item = (&str, &RgbImage)> + '_ {
        self.epoch_order(epoch)
            .into_iter()
            .map(move |i| (self.names[i].as_str(), &self.images[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppm::write_ppm;

    fn gradient(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [(x * 3) as u8, (y * 5) as u8, 77]).unwrap()
    }

    #[test]
    fn crop_of_exact_size_is_identity() {
        let img = gradient(16, 16);
        assert_eq!(fit_square(&img, 16).unwrap(), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = RgbImage::filled(37, 23, [12, 200, 99]).unwrap();
        let out = fit_square(&img, 16).unwrap();
        assert_eq!(out, RgbImage::filled(16, 16, [12, 200, 99]).unwrap());
    }

    #[test]
    fn fit_square_geometry() {
        let out = fit_square(&gradient(40, 20), 10).unwrap();
        assert_eq!((out.width(), out.height()), (10, 10));
        assert!(center_crop(&gradient(4, 4), 5, 4).is_err());
    }

    #[test]
    fn plane_resize_upsamples_with_half_pixel_centers() {
        let out = resize_plane(&[0.0, 4.0], 2, 1, 4, 1);
        assert_eq!(out, vec![0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn loads_in_lexicographic_order_and_skips_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.ppm", "a.ppm", "c.ppm"] {
            write_ppm(dir.path().join(name), &gradient(8, 8)).unwrap();
        }
        std::fs::write(dir.path().join("broken.ppm"), b"P6\n9 9\n255\n").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let ds = Dataset::load(dir.path(), 8, 3).unwrap();
        assert_eq!(ds.names(), &["a.ppm", "b.ppm", "c.ppm"]);
        let again = Dataset::load(dir.path(), 8, 3).unwrap();
        for epoch in 0..5 {
            assert_eq!(ds.epoch_order(epoch), again.epoch_order(epoch));
        }
        let mut order = ds.epoch_order(0);
        order.sort();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::load(dir.path(), 8, 0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn epochs_reshuffle() {
        let imgs: Vec<RgbImage> = (0..20).map(|_| gradient(2, 2)).collect();
        let names = (0..20).map(|i| format!("{i}")).collect();
        let ds = Dataset::from_images(names, imgs, 9).unwrap();
        assert_ne!(ds.epoch_order(0), ds.epoch_order(1));
    }
}
