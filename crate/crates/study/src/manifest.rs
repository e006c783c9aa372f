//! The image manifest: real/fake pairs per algorithm plus sentinel pairs
//! (ground truth against a random-color baseline).
//!
//! ```json
//! {
//!   "algorithms": { "ours": [{ "id": "p000", "real": "gt/000.ppm", "fake": "ours/000.ppm" }] },
//!   "sentinels": [{ "id": "s000", "real": "gt/000.ppm", "fake": "random/000.ppm" }]
//! }
//! ```
//!
//! Image references are relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SENTINELS_PER_SESSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair {
    pub id: String,
    pub real: String,
    pub fake: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub algorithms: BTreeMap<String, Vec<Pair>>,
    pub sentinels: Vec<Pair>,
}

/// A validated manifest with its image files resolved.
#[derive(Debug, Clone)]
pub struct Manifest {
    file: ManifestFile,
    images: HashMap<String, PathBuf>,
}

fn check_ref(r: &str) -> Result<()> {
    let p = Path::new(r);
    let plain = !r.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)));
    if !plain {
        return Err(Error::Manifest(format!("image reference `{r}` must be a relative path without `..`")));
    }
    Ok(())
}

fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let img = chromalab_core::ppm::read_ppm(path)?;
    Ok((img.width(), img.height()))
}

impl Manifest {
    pub fn parse(json: &str, image_root: impl AsRef<Path>) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(json).map_err(|e| Error::Manifest(e.to_string()))?;
        Self::new(file, image_root)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&json, path.parent().unwrap_or(Path::new(".")))
    }

    /// Checks ids, references and files. PPM pairs must have matching
    /// dimensions; other formats are only checked for existence.
    pub fn new(file: ManifestFile, image_root: impl AsRef<Path>) -> Result<Self> {
        let root = image_root.as_ref();
        if file.algorithms.is_empty() {
            return Err(Error::Manifest("no algorithms".into()));
        }
        if file.sentinels.len() < SENTINELS_PER_SESSION {
            return Err(Error::Manifest(format!(
                "{} sentinel pairs, need at least {SENTINELS_PER_SESSION}",
                file.sentinels.len()
            )));
        }
        let mut images = HashMap::new();
        for (name, pairs) in file.algorithms.iter().map(|(k, v)| (k.as_str(), v)).chain([("sentinels", &file.sentinels)]) {
            if name.is_empty() {
                return Err(Error::Manifest("empty algorithm name".into()));
            }
            let mut ids = BTreeSet::new();
            for pair in pairs {
                if pair.id.is_empty() || !ids.insert(pair.id.as_str()) {
                    return Err(Error::Manifest(format!("{name}: missing or duplicate pair id `{}`", pair.id)));
                }
                let mut dims = Vec::new();
                for r in [&pair.real, &pair.fake] {
                    check_ref(r)?;
                    let path = root.join(r);
                    if !path.is_file() {
                        return Err(Error::Manifest(format!("{name}/{}: missing image {}", pair.id, path.display())));
                    }
                    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
                        dims.push(dimensions(&path)?);
                    }
                    images.insert(r.clone(), path);
                }
                if dims.len() == 2 && dims[0] != dims[1] {
                    return Err(Error::Manifest(format!(
                        "{name}/{}: real is {}x{}, fake is {}x{}",
                        pair.id, dims[0].0, dims[0].1, dims[1].0, dims[1].1
                    )));
                }
            }
        }
        Ok(Self { file, images })
    }

    pub fn file(&self) -> &ManifestFile {
        &self.file
    }

    pub fn pairs(&self, algorithm: &str) -> Option<&[Pair]> {
        self.file.algorithms.get(algorithm).map(Vec::as_slice)
    }

    pub fn sentinels(&self) -> &[Pair] {
        &self.file.sentinels
    }

    /// File behind an image reference, if the manifest lists it.
    pub fn image_path(&self, r: &str) -> Option<&Path> {
        self.images.get(r).map(PathBuf::as_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn references_must_stay_inside_the_root() {
        assert!(check_ref("gt/0.ppm").is_ok());
        for bad in ["", "../x.ppm", "/etc/passwd", "a/../../b", "./a"] {
            assert!(check_ref(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let json = r#"{"algorithms": {}, "sentinels": [], "extra": 1}"#;
        assert!(matches!(Manifest::parse(json, "."), Err(Error::Manifest(_))));
        assert!(matches!(Manifest::parse("{", "."), Err(Error::Manifest(_))));
    }
}
