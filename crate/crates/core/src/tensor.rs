//! Activation tensors and row-major feature matrices.

use crate::error::{Error, Result};

/// The H×W×D activations of one convolutional layer.
///
/// Values are stored row-major as (row, column, channel), so the D-vector of
/// a spatial unit is contiguous. The `rectified` marker records that the
/// tensor came out of a ReLU; a rectified tensor never holds negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    height: usize,
    width: usize,
    depth: usize,
    values: Vec<f32>,
    rectified: bool,
}

impl ActivationTensor {
    pub fn new(height: usize, width: usize, depth: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(Error::Validation(format!(
                "tensor dimensions must be positive, got {height}x{width}x{depth}"
            )));
        }
        let expected = height * width * depth;
        if values.len() != expected {
            return Err(Error::Validation(format!(
                "{height}x{width}x{depth} tensor needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            depth,
            values,
            rectified: false,
        })
    }

    pub fn zeros(height: usize, width: usize, depth: usize) -> Result<Self> {
        Self::new(height, width, depth, vec![0.0; height * width * depth])
    }

    /// Builds a tensor by evaluating `f(row, col, channel)` at every position.
    pub fn from_fn(
        height: usize,
        width: usize,
        depth: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width * depth);
        for r in 0..height {
            for c in 0..width {
                for k in 0..depth {
                    values.push(f(r, c, k));
                }
            }
        }
        Self::new(height, width, depth, values)
    }

    /// Sets the ReLU marker. Marking a tensor with negative entries as
    /// rectified is rejected.
    pub fn with_rectified(mut self, rectified: bool) -> Result<Self> {
        if rectified {
            if let Some(pos) = self.values.iter().position(|v| *v < 0.0 || v.is_nan()) {
                return Err(Error::Validation(format!(
                    "tensor marked rectified holds {} at flat offset {pos}",
                    self.values[pos]
                )));
            }
        }
        self.rectified = rectified;
        Ok(self)
    }

    /// Used by stages whose output is nonnegative by construction.
    pub(crate) fn mark_rectified_unchecked(mut self) -> Self {
        self.rectified = true;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.depth)
    }

    pub fn rectified(&self) -> bool {
        self.rectified
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.depth + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.values[self.offset(row, col, channel)]
    }

    /// The D-dimensional feature vector of spatial unit (row, col).
    #[inline]
    pub fn unit(&self, row: usize, col: usize) -> &[f32] {
        let start = self.offset(row, col, 0);
        &self.values[start..start + self.depth]
    }

    /// Copies the rows `[top, top+height)` and columns `[left, left+width)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::Geometry(format!(
                "crop {height}x{width} at ({top},{left}) does not fit a {}x{} tensor",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(height * width * self.depth);
        for r in top..top + height {
            let start = self.offset(r, left, 0);
            values.extend_from_slice(&self.values[start..start + width * self.depth]);
        }
        let mut out = Self::new(height, width, self.depth, values)?;
        out.rectified = self.rectified;
        Ok(out)
    }

    /// Nearest-neighbour resampling to `height`×`width`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        let src_h = self.height;
        let src_w = self.width;
        let out = Self::from_fn(height, width, self.depth, |r, c, k| {
            let sr = (r * src_h) / height;
            let sc = (c * src_w) / width;
            self.get(sr, sc, k)
        })?;
        Ok(Self {
            rectified: self.rectified,
            ..out
        })
    }
}

/// `count` rows of `dim` values each, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    count: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(count: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("feature matrix dim must be positive".into()));
        }
        if values.len() != count * dim {
            return Err(Error::Validation(format!(
                "{count}x{dim} matrix needs {} values, got {}",
                count * dim,
                values.len()
            )));
        }
        Ok(Self { count, dim, values })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(0, dim, Vec::new())
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::Validation("cannot infer dim from zero rows".into()))?;
        let mut m = Self::new(0, dim.max(1), Vec::with_capacity(rows.len() * dim))?;
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.dim)
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Validation(format!(
                "row of length {} pushed into matrix of dim {}",
                row.len(),
                self.dim
            )));
        }
        self.values.extend_from_slice(row);
        self.count += 1;
        Ok(())
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            count: indices.len(),
            dim: self.dim,
            values,
        }
    }
}
