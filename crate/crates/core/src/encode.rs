//! One image part to one pooled vector: network forward, local features,
//! optional PCA, pooling scheme, normalization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cnn::{run_network_prefix, LayerPair, NetworkSpec};
use crate::error::{Error, Result};
use crate::local_features::{correspondence_map, extract_local_features, CorrespondenceMap, LocalFeatureSet};
use crate::pooling::{cross_layer_pool_features, direct_max_pool, direct_sum_sqrt_pool_with, spp_pool, SumSqrtVariant};
use crate::postproc::{l2_normalize, pca_project, power_normalize, PcaModel};
use crate::tensor::ActivationTensor;

/// Pooling scheme, written `cross-layer`, `direct-max`, `direct-sum-sqrt`
/// or `spp:1,2,4`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PoolingScheme {
    CrossLayer,
    DirectMax,
    DirectSumSqrt,
    Spp(Vec<usize>),
}

impl fmt::Display for PoolingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolingScheme::CrossLayer => f.write_str("cross-layer"),
            PoolingScheme::DirectMax => f.write_str("direct-max"),
            PoolingScheme::DirectSumSqrt => f.write_str("direct-sum-sqrt"),
            PoolingScheme::Spp(levels) => {
                let parts: Vec<String> = levels.iter().map(usize::to_string).collect();
                write!(f, "spp:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for PoolingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cross-layer" => Ok(Self::CrossLayer),
            "direct-max" => Ok(Self::DirectMax),
            "direct-sum-sqrt" => Ok(Self::DirectSumSqrt),
            other => {
                let levels = other
                    .strip_prefix("spp:")
                    .or_else(|| other.strip_prefix("spp(").and_then(|r| r.strip_suffix(')')))
                    .ok_or_else(|| Error::Config(format!("unknown pooling scheme {other:?}")))?;
                let levels = levels
                    .split(',')
                    .map(|l| l.trim().parse::<usize>().ok().filter(|g| *g > 0))
                    .collect::<Option<Vec<_>>>()
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| Error::Config(format!("bad spp levels in {other:?}")))?;
                Ok(Self::Spp(levels))
            }
        }
    }
}

impl TryFrom<String> for PoolingScheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PoolingScheme> for String {
    fn from(s: PoolingScheme) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Conv ordinal t of the (t, t+1) pair.
    pub layer: usize,
    /// Defaults to the kernel and stride of conv t+1.
    pub window: Option<(usize, usize)>,
    pub stride: Option<usize>,
    pub scheme: PoolingScheme,
    pub sum_sqrt_variant: SumSqrtVariant,
    pub power_normalize: bool,
    pub l2_normalize: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layer: 1,
            window: None,
            stride: None,
            scheme: PoolingScheme::CrossLayer,
            sum_sqrt_variant: SumSqrtVariant::default(),
            power_normalize: true,
            l2_normalize: false,
        }
    }
}

/// Layer pair plus the resolved extraction geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedEncoder {
    pub pair: LayerPair,
    pub window: (usize, usize),
    pub stride: usize,
}

impl EncoderConfig {
    pub fn resolve(&self, net: &NetworkSpec) -> Result<ResolvedEncoder> {
        let pair = net.cross_layer_pair(self.layer)?;
        let next = net.conv_at(pair.next_conv_stage).expect("pair points at a conv stage");
        let window = self.window.unwrap_or((next.kernel_h, next.kernel_w));
        let stride = self.stride.unwrap_or(next.stride);
        if window.0 == 0 || window.1 == 0 || stride == 0 {
            return Err(Error::Config("window and stride must be positive".into()));
        }
        if self.scheme == PoolingScheme::CrossLayer {
            if window != (next.kernel_h, next.kernel_w) {
                return Err(Error::Config(format!(
                    "cross-layer window {}x{} must equal the {}x{} kernel of conv {}",
                    window.0,
                    window.1,
                    next.kernel_h,
                    next.kernel_w,
                    self.layer + 1
                )));
            }
            if stride != next.stride {
                return Err(Error::Config(format!(
                    "cross-layer stride {stride} must equal the stride {} of conv {}",
                    next.stride,
                    self.layer + 1
                )));
            }
        }
        Ok(ResolvedEncoder { pair, window, stride })
    }
}

/// Local features of one image part, plus the next layer's maps when the
/// scheme needs them.
#[derive(Debug, Clone)]
pub struct PartFeatures {
    pub set: LocalFeatureSet,
    pub indicators: Option<(ActivationTensor, CorrespondenceMap)>,
}

impl PartFeatures {
    /// Spatial units of the layer the features were taken from.
    pub fn spatial_units(&self) -> usize {
        self.set.source_dims.0 * self.set.source_dims.1
    }
}

pub fn extract_part(
    image: &ActivationTensor,
    net: &NetworkSpec,
    enc: &EncoderConfig,
    resolved: &ResolvedEncoder,
) -> Result<PartFeatures> {
    let cross = enc.scheme == PoolingScheme::CrossLayer;
    let last = if cross {
        resolved.pair.indicator_stage
    } else {
        resolved.pair.features_stage
    };
    let mut outputs = run_network_prefix(image, net, last + 1)?;
    let layer_t1 = if cross { outputs.pop() } else { None };
    let layer_t = outputs.swap_remove(resolved.pair.features_stage);
    let set = extract_local_features(&layer_t, resolved.window.0, resolved.window.1, resolved.stride)?;
    let indicators = match layer_t1 {
        Some(next) => {
            let conv = net
                .conv_at(resolved.pair.next_conv_stage)
                .expect("pair points at a conv stage");
            let cmap = correspondence_map(&set, conv, (next.height(), next.width()))?;
            Some((next, cmap))
        }
        None => None,
    };
    Ok(PartFeatures { set, indicators })
}

/// Pooled and normalized vector for one part.
pub fn pool_part(part: &PartFeatures, enc: &EncoderConfig, pca: Option<&PcaModel>) -> Result<Vec<f32>> {
    let raw = match &enc.scheme {
        PoolingScheme::CrossLayer => {
            let (next, cmap) = part
                .indicators
                .as_ref()
                .ok_or_else(|| Error::Contract("cross-layer pooling needs next-layer maps".into()))?;
            cross_layer_pool_features(&part.set, next, cmap, pca)?.values
        }
        scheme => {
            let projected = match pca {
                Some(model) => Some(pca_project(&part.set.features, model)?),
                None => None,
            };
            let feats = projected.as_ref().unwrap_or(&part.set.features);
            match scheme {
                PoolingScheme::DirectMax => direct_max_pool(feats)?,
                PoolingScheme::DirectSumSqrt => direct_sum_sqrt_pool_with(feats, enc.sum_sqrt_variant)?,
                PoolingScheme::Spp(levels) => match projected {
                    Some(p) => spp_pool(&part.set.with_features(p)?, levels)?,
                    None => spp_pool(&part.set, levels)?,
                },
                PoolingScheme::CrossLayer => unreachable!(),
            }
        }
    };
    // sum-sqrt already applies its own root
    let powered = if enc.power_normalize && enc.scheme != PoolingScheme::DirectSumSqrt {
        power_normalize(&raw)
    } else {
        raw
    };
    Ok(if enc.l2_normalize {
        l2_normalize(&powered)
    } else {
        powered
    })
}

/// Dimension of [`pool_part`]'s output for descriptors of `feature_dim`
/// (after PCA) and `channels` indicator maps.
pub fn pooled_dim(scheme: &PoolingScheme, feature_dim: usize, channels: usize) -> usize {
    match scheme {
        PoolingScheme::CrossLayer => feature_dim * channels,
        PoolingScheme::DirectMax | PoolingScheme::DirectSumSqrt => feature_dim,
        PoolingScheme::Spp(levels) => feature_dim * levels.iter().map(|g| g * g).sum::<usize>(),
    }
}
