//! `path<TAB>split<TAB>label[,label...]` dataset lists.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{decode_tensor, read_file};
use crate::tensor::ActivationTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub id: String,
    pub path: PathBuf,
    pub split: Split,
    /// Indices into [`DatasetManifest::classes`].
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Class names in order of first appearance.
    pub classes: Vec<String>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut classes: Vec<String> = Vec::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, split, labels] = fields[..] else {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 3 tab-separated fields, got {}",
                    n + 1,
                    fields.len()
                )));
            };
            let split = match split.trim() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::Format(format!(
                        "manifest line {}: split must be train or test, got {other:?}",
                        n + 1
                    )))
                }
            };
            let mut ids = Vec::new();
            for name in labels.split(',').map(str::trim) {
                if name.is_empty() {
                    return Err(Error::Validation(format!("manifest line {}: empty label", n + 1)));
                }
                let id = match classes.iter().position(|c| c == name) {
                    Some(i) => i,
                    None => {
                        classes.push(name.to_string());
                        classes.len() - 1
                    }
                };
                if ids.contains(&id) {
                    return Err(Error::Validation(format!(
                        "manifest line {}: repeated label {name}",
                        n + 1
                    )));
                }
                ids.push(id);
            }
            entries.push(ManifestEntry {
                id: path.to_string(),
                path: base_dir.join(path),
                split,
                labels: ids,
            });
        }
        let m = Self { entries, classes };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn validate(&self) -> Result<()> {
        for split in [Split::Train, Split::Test] {
            if !self.entries.iter().any(|e| e.split == split) {
                return Err(Error::Validation(format!("manifest has no {split:?} entries")));
            }
        }
        if self.classes.len() < 2 {
            return Err(Error::Validation("manifest needs at least two classes".into()));
        }
        for (k, name) in self.classes.iter().enumerate() {
            if !self.split(Split::Train).any(|e| e.labels.contains(&k)) {
                return Err(Error::Validation(format!("class {name} has no training examples")));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn is_multi_label(&self) -> bool {
        self.entries.iter().any(|e| e.labels.len() > 1)
    }
}

/// Loads a tensor file, or a PGM/PPM image scaled to [0, 1].
pub fn load_input(path: &Path) -> Result<ActivationTensor> {
    let bytes = read_file(path)?;
    decode_input(path, &bytes)
}

pub(crate) fn decode_input(path: &Path, bytes: &[u8]) -> Result<ActivationTensor> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" | "ppm" | "pnm" | "pbm" => decode_pnm(bytes),
        _ => decode_tensor(bytes),
    }
}

#[cfg(feature = "pnm")]
pub fn decode_pnm(bytes: &[u8]) -> Result<ActivationTensor> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::Format(format!("pnm: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        ActivationTensor::new(h, w, 3, img.to_rgb32f().into_raw())
    } else {
        ActivationTensor::new(h, w, 1, img.to_luma32f().into_raw())
    }
}

#[cfg(not(feature = "pnm"))]
pub fn decode_pnm(_bytes: &[u8]) -> Result<ActivationTensor> {
    Err(Error::Config("built without PGM/PPM support".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "# comment\na.cpt\ttrain\tcat\nb.cpt\ttrain\tdog,cat\nc.cpt\ttest\tdog\n";

    #[test]
    fn parses_labels_and_paths() {
        let m = DatasetManifest::parse(TEXT, Path::new("/d")).unwrap();
        assert_eq!(m.classes, vec!["cat", "dog"]);
        assert_eq!(m.entries[1].labels, vec![1, 0]);
        assert_eq!(m.entries[2].path, PathBuf::from("/d/c.cpt"));
        assert_eq!(m.entries[0].id, "a.cpt");
        assert!(m.is_multi_label());
        assert_eq!(m.split(Split::Test).count(), 1);
    }

    #[test]
    fn rejects_bad_manifests() {
        let base = Path::new(".");
        assert!(matches!(
            DatasetManifest::parse("a\ttrain", base),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            DatasetManifest::parse("a\tval\tx", base),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            DatasetManifest::parse("a\ttrain\tx\nb\ttrain\ty\n", base),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            DatasetManifest::parse("a\ttrain\tx,\nb\ttest\ty", base),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            DatasetManifest::parse("a\ttrain\tx\nb\ttest\ty\n", base),
            Err(Error::Validation(_))
        ));
    }

    #[cfg(feature = "pnm")]
    #[test]
    fn reads_pgm_and_ppm() {
        let pgm = b"P2\n2 2\n255\n0 255\n51 102\n";
        let t = decode_input(Path::new("x.pgm"), pgm).unwrap();
        assert_eq!(t.dims(), (2, 2, 1));
        assert_eq!(t.values(), &[0.0, 1.0, 0.2, 0.4]);
        let mut ppm = b"P6\n1 1\n255\n".to_vec();
        ppm.extend_from_slice(&[255, 0, 51]);
        let t = decode_input(Path::new("x.PPM"), &ppm).unwrap();
        assert_eq!(t.values(), &[1.0, 0.0, 0.2]);
        assert!(matches!(
            decode_input(Path::new("x.pgm"), b"P9 junk"),
            Err(Error::Format(_))
        ));
    }
}
