//! Whole-image plus M×N block representations, concatenated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::NetworkSpec;
use crate::encode::{extract_part, pool_part, EncoderConfig, PartFeatures, ResolvedEncoder};
use crate::error::{Error, Result};
use crate::postproc::PcaModel;
use crate::tensor::ActivationTensor;

/// Block level is present whenever the split has more than one block or the
/// whole image is excluded; a 1×1 split alongside the whole image would only
/// duplicate it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionConfig {
    pub blocks_m: usize,
    pub blocks_n: usize,
    pub overlap_fraction: f64,
    pub include_whole_image: bool,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        Self {
            blocks_m: 1,
            blocks_n: 1,
            overlap_fraction: 0.0,
            include_whole_image: true,
        }
    }
}

impl ResolutionConfig {
    pub fn blocks(m: usize, n: usize, include_whole_image: bool) -> Self {
        Self {
            blocks_m: m,
            blocks_n: n,
            overlap_fraction: 0.0,
            include_whole_image,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks_m == 0 || self.blocks_n == 0 {
            return Err(Error::Config("block counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap fraction must be in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    pub fn has_blocks(&self) -> bool {
        self.blocks_m * self.blocks_n > 1 || !self.include_whole_image
    }
}

/// Half-open pixel rectangle of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockBounds {
    pub row: usize,
    pub col: usize,
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl BlockBounds {
    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }
}

fn split_axis(extent: usize, parts: usize, overlap: f64) -> Result<Vec<(usize, usize)>> {
    let nominal = extent / parts;
    if nominal == 0 {
        return Err(Error::Geometry(format!(
            "cannot split {extent} pixels into {parts} blocks"
        )));
    }
    let ext = (overlap * nominal as f64).floor() as usize;
    Ok((0..parts)
        .map(|i| {
            let start = i * nominal;
            let end = if i + 1 == parts { extent } else { start + nominal };
            let start = if i > 0 { start.saturating_sub(ext) } else { start };
            let end = if i + 1 < parts { (end + ext).min(extent) } else { end };
            (start, end)
        })
        .collect())
}

/// Row-major block rectangles. Boundaries use floor division with the last
/// block taking the remainder; overlap extends interior sides by
/// `⌊f·nominal⌋`, clamped to the image.
pub fn block_bounds(height: usize, width: usize, config: &ResolutionConfig) -> Result<Vec<BlockBounds>> {
    config.validate()?;
    let rows = split_axis(height, config.blocks_m, config.overlap_fraction)?;
    let cols = split_axis(width, config.blocks_n, config.overlap_fraction)?;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for (r, &(top, bottom)) in rows.iter().enumerate() {
        for (c, &(left, right)) in cols.iter().enumerate() {
            out.push(BlockBounds {
                row: r,
                col: c,
                top,
                bottom,
                left,
                right,
            });
        }
    }
    Ok(out)
}

/// Cuts the image into blocks, each at least `min_extent` on both sides.
pub fn partition_blocks(
    image: &ActivationTensor,
    config: &ResolutionConfig,
    min_extent: usize,
) -> Result<Vec<ActivationTensor>> {
    block_bounds(image.height(), image.width(), config)?
        .iter()
        .map(|b| {
            if b.height() < min_extent || b.width() < min_extent {
                return Err(Error::Geometry(format!(
                    "block ({},{}) is {}x{}, below the network's minimum input {min_extent}",
                    b.row,
                    b.col,
                    b.height(),
                    b.width()
                )));
            }
            image.crop(b.top, b.left, b.height(), b.width())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Whole,
    Block,
}

#[derive(Debug, Clone)]
pub struct ImagePart {
    pub label: String,
    pub level: Level,
    pub features: PartFeatures,
}

fn block_label(row: usize, col: usize, config: &ResolutionConfig) -> String {
    if config.blocks_m <= 10 && config.blocks_n <= 10 {
        format!("b{row}{col}")
    } else {
        format!("b{row}_{col}")
    }
}

/// Runs the network on every part of one image, in layout order.
pub fn extract_parts(
    image: &ActivationTensor,
    net: &NetworkSpec,
    config: &ResolutionConfig,
    enc: &EncoderConfig,
    resolved: &ResolvedEncoder,
) -> Result<Vec<ImagePart>> {
    config.validate()?;
    let mut jobs: Vec<(String, Level, ActivationTensor)> = Vec::new();
    if config.include_whole_image {
        jobs.push(("whole".into(), Level::Whole, image.clone()));
    }
    if config.has_blocks() {
        let bounds = block_bounds(image.height(), image.width(), config)?;
        let blocks = partition_blocks(image, config, net.min_input_extent())?;
        for (b, t) in bounds.iter().zip(blocks) {
            jobs.push((block_label(b.row, b.col, config), Level::Block, t));
        }
    }
    jobs.into_par_iter()
        .map(|(label, level, t)| {
            let features = extract_part(&t, net, enc, resolved).map_err(|e| e.in_stage("extract", &label))?;
            Ok(ImagePart { label, level, features })
        })
        .collect()
}

/// PCA model used for each resolution level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResolutionModels {
    pub whole: Option<PcaModel>,
    pub blocks: Option<PcaModel>,
}

impl ResolutionModels {
    pub fn for_level(&self, level: Level) -> Option<&PcaModel> {
        match level {
            Level::Whole => self.whole.as_ref(),
            Level::Block => self.blocks.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRepresentation {
    pub values: Vec<f32>,
    /// (label, offset, length) in concatenation order.
    pub parts: Vec<(String, usize, usize)>,
}

impl ImageRepresentation {
    pub fn part(&self, label: &str) -> Option<&[f32]> {
        self.parts
            .iter()
            .find(|(l, _, _)| l == label)
            .map(|(_, off, len)| &self.values[*off..off + len])
    }
}

pub fn assemble(parts: &[ImagePart], enc: &EncoderConfig, models: &ResolutionModels) -> Result<ImageRepresentation> {
    let pooled = parts
        .par_iter()
        .map(|p| pool_part(&p.features, enc, models.for_level(p.level)).map_err(|e| e.in_stage("pool", &p.label)))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(pooled.iter().map(Vec::len).sum());
    let mut layout = Vec::with_capacity(parts.len());
    for (p, v) in parts.iter().zip(pooled) {
        layout.push((p.label.clone(), values.len(), v.len()));
        values.extend(v);
    }
    Ok(ImageRepresentation { values, parts: layout })
}

pub fn multires_representation(
    image: &ActivationTensor,
    net: &NetworkSpec,
    config: &ResolutionConfig,
    enc: &EncoderConfig,
    models: &ResolutionModels,
) -> Result<ImageRepresentation> {
    let resolved = enc.resolve(net)?;
    let parts = extract_parts(image, net, config, enc, &resolved)?;
    assemble(&parts, enc, models)
}
