//! TOML pipeline configuration and the `CL-xy[F|C]` presets.
//!
//! ```toml
//! preset = "CL-12C"          # optional; explicit keys below override it
//! network = "net.txt"        # relative to the config file
//! layer = 1                  # conv t of the (t, t+1) pair
//! window = [3, 3]            # default: kernel of conv t+1
//! stride = 1                 # default: stride of conv t+1
//! pca_dim = 16               # omit for no PCA
//! pca_sample_cap = 100000
//! pca_whiten = false
//! scheme = "cross-layer"     # direct-max | direct-sum-sqrt | spp:1,2
//! sum_sqrt_variant = "signed-root-of-sum"
//! power_normalize = true
//! l2_normalize = false
//! quantize = false
//! svm_c = 1.0
//! svm_tol = 1e-4
//! seed = 0
//! workers = 0                # 0: all cores
//!
//! [resolution]
//! blocks_m = 2
//! blocks_n = 2
//! overlap_fraction = 0.0
//! include_whole_image = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encode::{EncoderConfig, PoolingScheme};
use crate::error::{Error, Result};
use crate::multires::ResolutionConfig;
use crate::pooling::SumSqrtVariant;
use crate::postproc::DEFAULT_PCA_SAMPLE_CAP;
use crate::svm::{DEFAULT_C, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub network: PathBuf,
    pub encoder: EncoderConfig,
    pub pca_dim: Option<usize>,
    pub pca_sample_cap: usize,
    pub pca_whiten: bool,
    pub resolution: ResolutionConfig,
    pub quantize: bool,
    pub svm_c: f64,
    pub svm_tol: f64,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    network: Option<PathBuf>,
    layer: Option<usize>,
    window: Option<[usize; 2]>,
    stride: Option<usize>,
    pca_dim: Option<usize>,
    pca_sample_cap: Option<usize>,
    pca_whiten: Option<bool>,
    scheme: Option<PoolingScheme>,
    sum_sqrt_variant: Option<SumSqrtVariant>,
    power_normalize: Option<bool>,
    l2_normalize: Option<bool>,
    quantize: Option<bool>,
    svm_c: Option<f64>,
    svm_tol: Option<f64>,
    seed: Option<u64>,
    workers: Option<usize>,
    resolution: Option<ResolutionConfig>,
}

/// Layer pair and resolution named by a preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub layer: usize,
    pub resolution: ResolutionConfig,
}

/// `CL-12` pools conv 1 by conv 2 on the whole image, `CL-12F` on 2×2
/// blocks only, `CL-12C` on the whole image plus 2×2 blocks.
pub fn parse_preset(name: &str) -> Result<Preset> {
    let bad = || Error::Config(format!("unknown preset {name:?}; expected CL-<t><t+1>[F|C]"));
    let body = name.trim().strip_prefix("CL-").ok_or_else(bad)?;
    let (digits, resolution) = match body.chars().last() {
        Some('F') => (&body[..body.len() - 1], ResolutionConfig::blocks(2, 2, false)),
        Some('C') => (&body[..body.len() - 1], ResolutionConfig::blocks(2, 2, true)),
        _ => (body, ResolutionConfig::default()),
    };
    let d: Vec<usize> = digits
        .chars()
        .map(|c| c.to_digit(10).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(bad)?;
    match d[..] {
        [t, next] if t >= 1 && next == t + 1 => Ok(Preset { layer: t, resolution }),
        _ => Err(bad()),
    }
}

impl PipelineConfig {
    pub fn new(network: impl Into<PathBuf>) -> Self {
        Self {
            network: network.into(),
            encoder: EncoderConfig::default(),
            pca_dim: None,
            pca_sample_cap: DEFAULT_PCA_SAMPLE_CAP,
            pca_whiten: false,
            resolution: ResolutionConfig::default(),
            quantize: false,
            svm_c: DEFAULT_C,
            svm_tol: DEFAULT_TOL,
            seed: 0,
            workers: 0,
        }
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let p = parse_preset(name)?;
        self.encoder.layer = p.layer;
        self.encoder.scheme = PoolingScheme::CrossLayer;
        self.resolution = p.resolution;
        Ok(())
    }

    /// Parses TOML; relative `network` paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let network = raw
            .network
            .ok_or_else(|| Error::Config("config needs a `network` path".into()))?;
        let mut cfg = Self::new(base_dir.join(network));
        if let Some(p) = &raw.preset {
            cfg.apply_preset(p)?;
        }
        let e = &mut cfg.encoder;
        if let Some(v) = raw.layer {
            e.layer = v;
        }
        if let Some([h, w]) = raw.window {
            e.window = Some((h, w));
        }
        e.stride = raw.stride.or(e.stride);
        if let Some(v) = raw.scheme {
            e.scheme = v;
        }
        if let Some(v) = raw.sum_sqrt_variant {
            e.sum_sqrt_variant = v;
        }
        if let Some(v) = raw.power_normalize {
            e.power_normalize = v;
        }
        if let Some(v) = raw.l2_normalize {
            e.l2_normalize = v;
        }
        cfg.pca_dim = raw.pca_dim;
        cfg.pca_sample_cap = raw.pca_sample_cap.unwrap_or(cfg.pca_sample_cap);
        cfg.pca_whiten = raw.pca_whiten.unwrap_or(false);
        if let Some(r) = raw.resolution {
            cfg.resolution = r;
        }
        cfg.quantize = raw.quantize.unwrap_or(false);
        cfg.svm_c = raw.svm_c.unwrap_or(cfg.svm_c);
        cfg.svm_tol = raw.svm_tol.unwrap_or(cfg.svm_tol);
        cfg.seed = raw.seed.unwrap_or(0);
        cfg.workers = raw.workers.unwrap_or(0);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.layer == 0 {
            return Err(Error::Config("layer must be at least 1".into()));
        }
        if self.pca_dim == Some(0) {
            return Err(Error::Config("pca_dim must be positive".into()));
        }
        if self.pca_sample_cap < 2 {
            return Err(Error::Config("pca_sample_cap must be at least 2".into()));
        }
        if !(self.svm_c > 0.0 && self.svm_c.is_finite()) || self.svm_tol.is_nan() || self.svm_tol <= 0.0 {
            return Err(Error::Config("svm_c and svm_tol must be positive".into()));
        }
        self.resolution.validate()
    }
}
