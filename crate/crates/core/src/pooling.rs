//! Indicator-map pooling, cross-layer pooling and the direct/SPP baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_features::{extract_local_features, CorrespondenceMap, LocalFeatureSet};
use crate::postproc::{pca_project, PcaModel};
use crate::tensor::{ActivationTensor, FeatureMatrix};

/// Concatenation of `channels` pooled slices of `channel_dim` values each;
/// channel `k` occupies `[k·channel_dim, (k+1)·channel_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub values: Vec<f32>,
    pub channel_dim: usize,
    pub channels: usize,
}

impl PooledVector {
    pub fn channel(&self, k: usize) -> &[f32] {
        &self.values[k * self.channel_dim..(k + 1) * self.channel_dim]
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Weight of feature `i` in pooling channel `k` at entry (i, k).
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorWeights {
    pub weights: FeatureMatrix,
}

impl IndicatorWeights {
    pub fn channels(&self) -> usize {
        self.weights.dim()
    }

    pub fn count(&self) -> usize {
        self.weights.count()
    }
}

/// `P_k = Σ_i x_i · w_{i,k}` for every channel, summed in ascending `i`.
pub fn indicator_pool(features: &FeatureMatrix, weights: &IndicatorWeights) -> Result<PooledVector> {
    if weights.count() != features.count() {
        return Err(Error::Contract(format!(
            "{} indicator rows for {} features",
            weights.count(),
            features.count()
        )));
    }
    let d = features.dim();
    let k_total = weights.channels();
    let mut acc = vec![0.0f64; d * k_total];
    for (x, w) in features.rows().zip(weights.weights.rows()) {
        for (k, wk) in w.iter().enumerate() {
            if *wk == 0.0 {
                continue;
            }
            let wk = f64::from(*wk);
            for (a, xi) in acc[k * d..(k + 1) * d].iter_mut().zip(x) {
                *a += f64::from(*xi) * wk;
            }
        }
    }
    Ok(PooledVector {
        values: acc.into_iter().map(|v| v as f32).collect(),
        channel_dim: d,
        channels: k_total,
    })
}

/// Reads the next layer's activations at each feature's corresponding unit.
pub fn gather_indicator_weights(next_layer: &ActivationTensor, cmap: &CorrespondenceMap) -> Result<IndicatorWeights> {
    if !next_layer.rectified() {
        return Err(Error::Contract(
            "indicator maps must come from a rectified (post-ReLU) tensor".into(),
        ));
    }
    if cmap.next_dims != (next_layer.height(), next_layer.width()) {
        return Err(Error::Contract(format!(
            "correspondence built for a {:?} layer, got {}x{}",
            cmap.next_dims,
            next_layer.height(),
            next_layer.width()
        )));
    }
    let k = next_layer.depth();
    let mut values = Vec::with_capacity(cmap.len() * k);
    for &(r, c) in &cmap.units {
        if r >= next_layer.height() || c >= next_layer.width() {
            return Err(Error::Geometry(format!("unit ({r},{c}) out of bounds")));
        }
        values.extend_from_slice(next_layer.unit(r, c));
    }
    Ok(IndicatorWeights {
        weights: FeatureMatrix::new(cmap.len(), k, values)?,
    })
}

/// Cross-layer pooling of `layer_t` local features weighted by the feature
/// maps of `layer_t1`. With a PCA model, descriptors are projected before
/// pooling, so the result has `pca.output_dim · depth(layer_t1)` values.
pub fn cross_layer_pool(
    layer_t: &ActivationTensor,
    layer_t1: &ActivationTensor,
    cmap: &CorrespondenceMap,
    pca: Option<&PcaModel>,
) -> Result<PooledVector> {
    let set = extract_local_features(layer_t, cmap.window_h, cmap.window_w, cmap.stride)?;
    cross_layer_pool_features(&set, layer_t1, cmap, pca)
}

/// As [`cross_layer_pool`], for features that were already extracted.
pub fn cross_layer_pool_features(
    set: &LocalFeatureSet,
    layer_t1: &ActivationTensor,
    cmap: &CorrespondenceMap,
    pca: Option<&PcaModel>,
) -> Result<PooledVector> {
    if set.len() != cmap.len() {
        return Err(Error::Contract(format!(
            "{} local features but correspondence covers {}",
            set.len(),
            cmap.len()
        )));
    }
    let weights = gather_indicator_weights(layer_t1, cmap)?;
    match pca {
        Some(model) => indicator_pool(&pca_project(&set.features, model)?, &weights),
        None => indicator_pool(&set.features, &weights),
    }
}

fn require_rows(features: &FeatureMatrix, what: &str) -> Result<()> {
    if features.count() == 0 {
        return Err(Error::Contract(format!("{what} needs at least one feature")));
    }
    Ok(())
}

/// Elementwise maximum over all descriptors.
pub fn direct_max_pool(features: &FeatureMatrix) -> Result<Vec<f32>> {
    require_rows(features, "direct max pooling")?;
    let mut out = features.row(0).to_vec();
    for row in features.rows().skip(1) {
        for (o, v) in out.iter_mut().zip(row) {
            *o = o.max(*v);
        }
    }
    Ok(out)
}

/// How direct sum pooling applies its square-root step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SumSqrtVariant {
    /// `sign(s)·sqrt(|s|)` with `s = Σ x_i`.
    #[default]
    SignedRootOfSum,
    /// `sqrt(Σ x_i²)`, squaring before the sum.
    RootOfSquares,
}

pub fn direct_sum_sqrt_pool(features: &FeatureMatrix) -> Result<Vec<f32>> {
    direct_sum_sqrt_pool_with(features, SumSqrtVariant::SignedRootOfSum)
}

pub fn direct_sum_sqrt_pool_with(features: &FeatureMatrix, variant: SumSqrtVariant) -> Result<Vec<f32>> {
    require_rows(features, "direct sum-sqrt pooling")?;
    let mut acc = vec![0.0f64; features.dim()];
    for row in features.rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            let v = f64::from(*v);
            *a += match variant {
                SumSqrtVariant::SignedRootOfSum => v,
                SumSqrtVariant::RootOfSquares => v * v,
            };
        }
    }
    Ok(acc
        .into_iter()
        .map(|s| (s.signum() * s.abs().sqrt()) as f32)
        .map(|v| if v == 0.0 { 0.0 } else { v })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SppMode {
    #[default]
    Max,
    Sum,
}

/// Cell of a `g`×`g` partition holding anchor-grid position (r, c) on an
/// R×C grid: `(⌊r·g/R⌋, ⌊c·g/C⌋)`.
pub fn spp_cell(r: usize, c: usize, rows: usize, cols: usize, g: usize) -> (usize, usize) {
    (r * g / rows, c * g / cols)
}

pub fn spp_pool(features: &LocalFeatureSet, levels: &[usize]) -> Result<Vec<f32>> {
    spp_pool_with(features, levels, SppMode::Max)
}

/// Spatial pyramid pooling over the anchor grid. Cells are concatenated
/// level by level, row-major within a level; empty cells contribute zeros.
pub fn spp_pool_with(features: &LocalFeatureSet, levels: &[usize], mode: SppMode) -> Result<Vec<f32>> {
    if levels.is_empty() {
        return Err(Error::Contract("spp needs at least one pyramid level".into()));
    }
    if levels.contains(&0) {
        return Err(Error::Contract("spp level grid size must be positive".into()));
    }
    let f = features.features.dim();
    let total_cells: usize = levels.iter().map(|g| g * g).sum();
    let mut out = Vec::with_capacity(total_cells * f);
    for &g in levels {
        let mut cells = vec![None::<Vec<f64>>; g * g];
        for i in 0..features.len() {
            let (r, c) = features.grid_position(i);
            let (cr, cc) = spp_cell(r, c, features.grid_rows, features.grid_cols, g);
            let row = features.features.row(i);
            let cell = &mut cells[cr * g + cc];
            match cell {
                None => *cell = Some(row.iter().map(|v| f64::from(*v)).collect()),
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(row) {
                        let v = f64::from(*v);
                        match mode {
                            SppMode::Max => *a = a.max(v),
                            SppMode::Sum => *a += v,
                        }
                    }
                }
            }
        }
        for cell in cells {
            match cell {
                Some(acc) => out.extend(acc.into_iter().map(|v| v as f32)),
                None => out.extend(std::iter::repeat_n(0.0f32, f)),
            }
        }
    }
    Ok(out)
}
