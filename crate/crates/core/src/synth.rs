//! Seeded synthetic datasets whose class is carried by the spatial
//! co-occurrence of two input patterns rather than by their amounts.
//!
//! Images have two channels, "A" and "B", on a zero background with small
//! Gaussian noise. The image is tiled into `cell`×`cell` cells and each
//! object sits in the top-left 3×3 corner of its own cell, so objects in
//! different cells are at least `cell − 2` pixels apart.
//!
//! * class 0: B directly right of A, `pairs` times
//! * class 1: B directly below A, `pairs` times
//! * class 2: `pairs` lone A and `pairs` lone B in separate cells
//!
//! Every class adds the same number of lone distractors of random type, so
//! per-channel counts and intensity totals have the same distribution in all
//! classes. Only pooling that relates a window's content to what the next
//! layer sees at that window separates them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cnn::NetworkSpec;
use crate::error::{Error, Result};
use crate::io::save_tensor;
use crate::tensor::ActivationTensor;

pub const CLASS_NAMES: [&str; 3] = ["horizontal", "vertical", "apart"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub size: usize,
    pub cell: usize,
    pub pairs: usize,
    pub distractors: usize,
    pub noise: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            size: 20,
            cell: 5,
            pairs: 3,
            distractors: 2,
            noise: 0.05,
            train_per_class: 100,
            test_per_class: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub tensor: ActivationTensor,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: Vec<SynthImage>,
    pub test: Vec<SynthImage>,
}

fn generate_image(params: &SynthParams, label: usize, rng: &mut ChaCha8Rng) -> Result<ActivationTensor> {
    let per_axis = params.size / params.cell;
    let objects = match label {
        0 | 1 => params.pairs,
        _ => 2 * params.pairs,
    } + params.distractors;
    if params.cell < 5 || per_axis * per_axis < objects {
        return Err(Error::Config(format!(
            "{objects} objects do not fit {per_axis}x{per_axis} cells of size {}",
            params.cell
        )));
    }
    let (s, d) = (params.size, 2);
    let mut values = vec![0.0f32; s * s * d];
    let mut cells: Vec<usize> = (0..per_axis * per_axis).collect();
    cells.shuffle(rng);
    let mut cells = cells.into_iter();
    let mut put = |r: usize, c: usize, ch: usize, rng: &mut ChaCha8Rng| {
        values[(r * s + c) * d + ch] = rng.gen_range(0.5f32..1.5);
    };
    let anchor = |rng: &mut ChaCha8Rng, cells: &mut dyn Iterator<Item = usize>| {
        let cell = cells.next().expect("cell count checked");
        let (cr, cc) = (cell / per_axis * params.cell, cell % per_axis * params.cell);
        (cr + rng.gen_range(0..2), cc + rng.gen_range(0..2))
    };
    for _ in 0..params.pairs {
        match label {
            0 => {
                let (r, c) = anchor(rng, &mut cells);
                put(r, c, 0, rng);
                put(r, c + 1, 1, rng);
            }
            1 => {
                let (r, c) = anchor(rng, &mut cells);
                put(r, c, 0, rng);
                put(r + 1, c, 1, rng);
            }
            _ => {
                let (r, c) = anchor(rng, &mut cells);
                put(r, c, 0, rng);
                let (r, c) = anchor(rng, &mut cells);
                put(r, c, 1, rng);
            }
        }
    }
    for _ in 0..params.distractors {
        let (r, c) = anchor(rng, &mut cells);
        let ch = rng.gen_range(0..2);
        put(r, c, ch, rng);
    }
    if params.noise > 0.0 {
        let normal = Normal::new(0.0, params.noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut values {
            *v += normal.sample(rng) as f32;
        }
    }
    ActivationTensor::new(s, s, d, values)
}

/// Balanced dataset with class labels 0, 1, 2 interleaved.
pub fn cooccurrence_dataset(params: &SynthParams, seed: u64) -> Result<SynthDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = |per_class: usize, rng: &mut ChaCha8Rng| -> Result<Vec<SynthImage>> {
        (0..per_class * 3)
            .map(|i| {
                let label = i % 3;
                Ok(SynthImage {
                    tensor: generate_image(params, label, rng)?,
                    label,
                })
            })
            .collect()
    };
    let train = split(params.train_per_class, &mut rng)?;
    let test = split(params.test_per_class, &mut rng)?;
    Ok(SynthDataset { train, test })
}

/// Two-layer network matched to the generator: a 1×1 conv mixing the two
/// channels, then a 3×3 same-padded conv whose maps serve as indicators.
pub fn demo_network(seed: u64) -> Result<NetworkSpec> {
    NetworkSpec::builder(2, seed)
        .conv(1, 1, 6, 1, 0)?
        .relu()
        .conv(3, 3, 64, 1, 1)?
        .relu()
        .build()
}

pub const DEMO_CONFIG: &str = "\
network = \"net.txt\"
layer = 1
pca_dim = 16
scheme = \"cross-layer\"
quantize = false
svm_c = 1.0
seed = 7
";

/// Writes tensors, `manifest.tsv`, `net.txt` and `config.toml` into `dir`.
pub fn write_dataset(dir: &Path, params: &SynthParams, seed: u64) -> Result<()> {
    let data = cooccurrence_dataset(params, seed)?;
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut manifest = String::new();
    for (split, items) in [("train", &data.train), ("test", &data.test)] {
        for (i, img) in items.iter().enumerate() {
            let name = format!("{split}_{i:04}.cpt");
            save_tensor(&img.tensor, images.join(&name))?;
            writeln!(manifest, "images/{name}\t{split}\t{}", CLASS_NAMES[img.label]).unwrap();
        }
    }
    let files = [
        ("manifest.tsv", manifest),
        ("net.txt", demo_network(seed)?.to_text()),
        ("config.toml", DEMO_CONFIG.to_string()),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_total(t: &ActivationTensor, ch: usize) -> f32 {
        t.values().iter().skip(ch).step_by(2).filter(|v| **v > 0.3).count() as f32
    }

    #[test]
    fn seeded_and_balanced() {
        let p = SynthParams {
            train_per_class: 4,
            test_per_class: 2,
            ..SynthParams::default()
        };
        let a = cooccurrence_dataset(&p, 1).unwrap();
        let b = cooccurrence_dataset(&p, 1).unwrap();
        assert_eq!(a.train.len(), 12);
        assert_eq!(a.test.len(), 6);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.tensor, y.tensor);
        }
        assert_ne!(a.train[0].tensor, cooccurrence_dataset(&p, 2).unwrap().train[0].tensor);
    }

    #[test]
    fn pattern_geometry() {
        let p = SynthParams {
            noise: 0.0,
            distractors: 0,
            train_per_class: 3,
            test_per_class: 1,
            ..SynthParams::default()
        };
        let data = cooccurrence_dataset(&p, 9).unwrap();
        for img in &data.train {
            let t = &img.tensor;
            assert_eq!(channel_total(t, 0), 3.0);
            assert_eq!(channel_total(t, 1), 3.0);
            let mut adjacent = [0usize; 2];
            for r in 0..20 {
                for c in 0..20 {
                    if t.get(r, c, 0) > 0.0 {
                        if c + 1 < 20 && t.get(r, c + 1, 1) > 0.0 {
                            adjacent[0] += 1;
                        }
                        if r + 1 < 20 && t.get(r + 1, c, 1) > 0.0 {
                            adjacent[1] += 1;
                        }
                    }
                }
            }
            match img.label {
                0 => assert_eq!(adjacent, [3, 0]),
                1 => assert_eq!(adjacent, [0, 3]),
                _ => assert_eq!(adjacent, [0, 0]),
            }
        }
    }

    #[test]
    fn too_many_objects_is_config_error() {
        let p = SynthParams {
            size: 10,
            ..SynthParams::default()
        };
        assert!(matches!(cooccurrence_dataset(&p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn writes_loadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = SynthParams {
            train_per_class: 1,
            test_per_class: 1,
            ..SynthParams::default()
        };
        write_dataset(dir.path(), &p, 3).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(manifest.lines().count(), 6);
        let net = NetworkSpec::load(dir.path().join("net.txt")).unwrap();
        assert_eq!(net, demo_network(3).unwrap());
        assert!(crate::io::load_tensor(dir.path().join("images/train_0000.cpt")).is_ok());
    }
}
