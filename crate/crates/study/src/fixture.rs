//! Small synthetic studies: flat-colored PPM images and a manifest that
//! references them. Used by tests and for trying the server locally.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chromalab_core::colorspace::RgbImage;
use chromalab_core::ppm::write_ppm;

use crate::manifest::{ManifestFile, Pair};
use crate::{Error, Result};

const SIDE: usize = 8;

fn image(dir: &Path, name: &str, rgb: [u8; 3]) -> Result<String> {
    let img = RgbImage::filled(SIDE, SIDE, rgb)?;
    write_ppm(dir.join(name), &img)?;
    Ok(name.to_string())
}

/// Writes `manifest.json` plus images into `dir` and returns the manifest
/// path. An algorithm named `ground_truth` pairs every real image with
/// itself.
pub fn write_study_fixture(dir: impl AsRef<Path>, algorithms: &[(&str, usize)], sentinels: usize) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let count = algorithms.iter().map(|&(_, n)| n).max().unwrap_or(0).max(sentinels);
    let real: Vec<String> = (0..count)
        .map(|i| image(dir, &format!("real_{i:03}.ppm"), [(i * 7 % 256) as u8, 120, 60]))
        .collect::<Result<_>>()?;
    let mut table = BTreeMap::new();
    for &(name, n) in algorithms {
        let pairs = (0..n)
            .map(|i| {
                let fake = if name == "ground_truth" {
                    real[i].clone()
                } else {
                    image(dir, &format!("{name}_{i:03}.ppm"), [(i * 7 % 256) as u8, 100, 90])?
                };
                Ok(Pair { id: format!("{name}_{i:03}"), real: real[i].clone(), fake })
            })
            .collect::<Result<_>>()?;
        table.insert(name.to_string(), pairs);
    }
    let sentinel_pairs = (0..sentinels)
        .map(|i| {
            let fake = image(dir, &format!("random_{i:03}.ppm"), [200, (i * 31 % 256) as u8, 10])?;
            Ok(Pair { id: format!("sentinel_{i:03}"), real: real[i].clone(), fake })
        })
        .collect::<Result<_>>()?;
    let file = ManifestFile { algorithms: table, sentinels: sentinel_pairs };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&file).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
