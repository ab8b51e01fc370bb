//! Sliding-window local features over one layer's activations, and the map
//! from each window to the spatial unit of the next conv layer computed from
//! that same window.

use crate::cnn::{window_count, ConvLayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{ActivationTensor, FeatureMatrix};

/// Local descriptors of one tensor.
///
/// Row `i` of `features` concatenates the D-vectors of the window anchored
/// (top-left) at `anchors[i]`, in window-row, window-column, channel order.
/// Anchors are enumerated row-major over a `grid_rows`×`grid_cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureSet {
    pub features: FeatureMatrix,
    pub anchors: Vec<(usize, usize)>,
    pub window_h: usize,
    pub window_w: usize,
    pub stride: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// (height, width, depth) of the tensor the features were taken from.
    pub source_dims: (usize, usize, usize),
}

impl LocalFeatureSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Position of feature `i` on the anchor grid.
    pub fn grid_position(&self, i: usize) -> (usize, usize) {
        (i / self.grid_cols, i % self.grid_cols)
    }

    /// Same anchors and geometry, different descriptors (e.g. after PCA).
    pub fn with_features(&self, features: FeatureMatrix) -> Result<Self> {
        if features.count() != self.len() {
            return Err(Error::Contract(format!(
                "replacement features have {} rows, set has {} anchors",
                features.count(),
                self.len()
            )));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }
}

/// N_t for an H×W tensor: `(⌊(H−m)/s⌋+1)·(⌊(W−n)/s⌋+1)`, or `None` when the
/// window does not fit.
pub fn local_feature_count(
    height: usize,
    width: usize,
    window_h: usize,
    window_w: usize,
    stride: usize,
) -> Option<usize> {
    Some(window_count(height, window_h, stride)? * window_count(width, window_w, stride)?)
}

pub fn extract_local_features(
    tensor: &ActivationTensor,
    window_h: usize,
    window_w: usize,
    stride: usize,
) -> Result<LocalFeatureSet> {
    let (h, w, d) = tensor.dims();
    if stride == 0 {
        return Err(Error::Geometry("extraction stride must be at least 1".into()));
    }
    let (Some(rows), Some(cols)) = (window_count(h, window_h, stride), window_count(w, window_w, stride)) else {
        return Err(Error::Geometry(format!(
            "{window_h}x{window_w} window does not fit a {h}x{w} tensor"
        )));
    };
    let dim = window_h * window_w * d;
    let mut values = Vec::with_capacity(rows * cols * dim);
    let mut anchors = Vec::with_capacity(rows * cols);
    for gr in 0..rows {
        for gc in 0..cols {
            let (r, c) = (gr * stride, gc * stride);
            anchors.push((r, c));
            for y in r..r + window_h {
                let start = tensor.offset(y, c, 0);
                values.extend_from_slice(&tensor.values()[start..start + window_w * d]);
            }
        }
    }
    Ok(LocalFeatureSet {
        features: FeatureMatrix::new(rows * cols, dim, values)?,
        anchors,
        window_h,
        window_w,
        stride,
        grid_rows: rows,
        grid_cols: cols,
        source_dims: (h, w, d),
    })
}

/// Feature index → spatial unit of layer t+1.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub units: Vec<(usize, usize)>,
    pub next_dims: (usize, usize),
    pub window_h: usize,
    pub window_w: usize,
    pub stride: usize,
}

impl CorrespondenceMap {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Maps each local feature to the next-layer unit whose receptive field is
/// exactly the feature's window.
///
/// Next-layer unit (u, v) convolves the padded input starting at
/// `(u·s − pad, v·s − pad)`, so anchor (r, c) maps to `((r+pad)/s, (c+pad)/s)`.
pub fn correspondence_map(
    feature_set: &LocalFeatureSet,
    next_layer: &ConvLayerSpec,
    next_dims: (usize, usize),
) -> Result<CorrespondenceMap> {
    if feature_set.window_h != next_layer.kernel_h || feature_set.window_w != next_layer.kernel_w {
        return Err(Error::Contract(format!(
            "window {}x{} does not match next-layer kernel {}x{}",
            feature_set.window_h, feature_set.window_w, next_layer.kernel_h, next_layer.kernel_w
        )));
    }
    if feature_set.stride != next_layer.stride {
        return Err(Error::Contract(format!(
            "extraction stride {} does not match next-layer stride {}",
            feature_set.stride, next_layer.stride
        )));
    }
    if feature_set.source_dims.2 != next_layer.in_depth {
        return Err(Error::Contract(format!(
            "features come from depth {}, next layer convolves depth {}",
            feature_set.source_dims.2, next_layer.in_depth
        )));
    }
    let s = next_layer.stride;
    let pad = next_layer.pad;
    if !pad.is_multiple_of(s) {
        return Err(Error::Geometry(format!(
            "pad {pad} is not a multiple of stride {s}; windows do not align with next-layer units"
        )));
    }
    let (nh, nw) = next_dims;
    let units = feature_set
        .anchors
        .iter()
        .map(|&(r, c)| {
            let u = ((r + pad) / s, (c + pad) / s);
            if u.0 >= nh || u.1 >= nw {
                Err(Error::Geometry(format!(
                    "anchor ({r},{c}) maps to unit {u:?} outside the {nh}x{nw} next layer"
                )))
            } else {
                Ok(u)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrespondenceMap {
        units,
        next_dims,
        window_h: feature_set.window_h,
        window_w: feature_set.window_w,
        stride: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{conv_forward, Lcg};
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, d: usize) -> ActivationTensor {
        ActivationTensor::from_fn(h, w, d, |r, c, k| (r * 1000 + c * 10 + k) as f32).unwrap()
    }

    #[test]
    fn thirteen_grid_gives_121_features() {
        let t = ramp(13, 13, 7);
        let set = extract_local_features(&t, 3, 3, 1).unwrap();
        assert_eq!(set.len(), 121);
        assert_eq!(set.features.dim(), 9 * 7);
        assert_eq!(set.anchors[0], (0, 0));
        assert_eq!(set.anchors[1], (0, 1));
        assert_eq!(set.anchors[11], (1, 0));
    }

    #[test]
    fn unit_window_is_the_unit_vector() {
        let t = ramp(4, 5, 3);
        let set = extract_local_features(&t, 1, 1, 1).unwrap();
        assert_eq!(set.len(), 20);
        assert_eq!(set.features.values(), t.values());
    }

    #[test]
    fn hand_concatenation_stride_two() {
        let t = ActivationTensor::from_fn(4, 4, 2, |r, c, k| (r * 8 + c * 2 + k) as f32).unwrap();
        let set = extract_local_features(&t, 2, 2, 2).unwrap();
        assert_eq!(set.anchors, vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        // window at (0,2): units (0,2),(0,3),(1,2),(1,3)
        assert_eq!(set.features.row(1), &[4.0, 5.0, 6.0, 7.0, 12.0, 13.0, 14.0, 15.0]);
        assert_eq!(set.features.row(2), &[16.0, 17.0, 18.0, 19.0, 24.0, 25.0, 26.0, 27.0]);
    }

    #[test]
    fn window_too_large() {
        let t = ramp(3, 5, 1);
        assert!(matches!(extract_local_features(&t, 4, 1, 1), Err(Error::Geometry(_))));
        assert!(matches!(extract_local_features(&t, 1, 1, 0), Err(Error::Geometry(_))));
    }

    fn conv_spec(k: usize, stride: usize, pad: usize, depth: usize) -> ConvLayerSpec {
        let mut rng = Lcg::new(5);
        ConvLayerSpec::seeded(k, k, depth, 2, stride, pad, &mut rng).unwrap()
    }

    #[test]
    fn stride_one_no_pad_is_identity() {
        let t = ramp(10, 10, 1);
        let set = extract_local_features(&t, 3, 3, 1).unwrap();
        let conv = conv_spec(3, 1, 0, 1);
        let cmap = correspondence_map(&set, &conv, (8, 8)).unwrap();
        assert_eq!(cmap.units[0], (0, 0));
        let i = set.anchors.iter().position(|a| *a == (5, 7)).unwrap();
        assert_eq!(cmap.units[i], (5, 7));
    }

    /// Convolve a one-hot-window probe and find the unit whose response
    /// changes; that is the ground-truth correspondence.
    fn responding_unit(h: usize, w: usize, conv: &ConvLayerSpec, anchor: (usize, usize)) -> (usize, usize) {
        let ones = ConvLayerSpec::new(
            conv.kernel_h,
            conv.kernel_w,
            1,
            1,
            conv.stride,
            conv.pad,
            vec![1.0; conv.kernel_h * conv.kernel_w],
            vec![0.0],
        )
        .unwrap();
        let probe = ActivationTensor::from_fn(h, w, 1, |r, c, _| {
            let inside = r >= anchor.0 && r < anchor.0 + conv.kernel_h && c >= anchor.1 && c < anchor.1 + conv.kernel_w;
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let out = conv_forward(&probe, &ones).unwrap();
        let full = (conv.kernel_h * conv.kernel_w) as f32;
        let mut hits = vec![];
        for r in 0..out.height() {
            for c in 0..out.width() {
                if out.get(r, c, 0) == full {
                    hits.push((r, c));
                }
            }
        }
        assert_eq!(hits.len(), 1, "exactly one unit sees the whole window");
        hits[0]
    }

    #[test]
    fn same_padding_shifts_by_pad() {
        let t = ramp(13, 13, 1);
        let set = extract_local_features(&t, 3, 3, 1).unwrap();
        let conv = conv_spec(3, 1, 1, 1);
        let cmap = correspondence_map(&set, &conv, (13, 13)).unwrap();
        for (i, &(r, c)) in set.anchors.iter().enumerate() {
            assert_eq!(cmap.units[i], (r + 1, c + 1));
        }
        for &anchor in &[(0, 0), (4, 9), (10, 10)] {
            let i = set.anchors.iter().position(|a| *a == anchor).unwrap();
            assert_eq!(cmap.units[i], responding_unit(13, 13, &conv, anchor));
        }
    }

    #[test]
    fn stride_two_halves_anchor() {
        let t = ramp(11, 11, 1);
        let set = extract_local_features(&t, 3, 3, 2).unwrap();
        let conv = conv_spec(3, 2, 0, 1);
        let cmap = correspondence_map(&set, &conv, conv.output_dims(11, 11).unwrap()).unwrap();
        let i = set.anchors.iter().position(|a| *a == (4, 6)).unwrap();
        assert_eq!(cmap.units[i], (2, 3));
        assert_eq!(cmap.units[i], responding_unit(11, 11, &conv, (4, 6)));
    }

    #[test]
    fn contract_and_geometry_errors() {
        let t = ramp(8, 8, 2);
        let set = extract_local_features(&t, 3, 3, 1).unwrap();
        assert!(matches!(
            correspondence_map(&set, &conv_spec(2, 1, 0, 2), (7, 7)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            correspondence_map(&set, &conv_spec(3, 2, 0, 2), (3, 3)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            correspondence_map(&set, &conv_spec(3, 1, 0, 2), (5, 5)),
            Err(Error::Geometry(_))
        ));
        let set2 = extract_local_features(&t, 3, 3, 2).unwrap();
        assert!(matches!(
            correspondence_map(&set2, &conv_spec(3, 2, 1, 2), (4, 4)),
            Err(Error::Geometry(_))
        ));
    }

    proptest! {
        #[test]
        fn count_formula(h in 1usize..25, w in 1usize..25, m in 1usize..5, n in 1usize..5, s in 1usize..4) {
            let t = ActivationTensor::zeros(h, w, 2).unwrap();
            match extract_local_features(&t, m, n, s) {
                Ok(set) => {
                    let expected = ((h - m) / s + 1) * ((w - n) / s + 1);
                    prop_assert_eq!(set.len(), expected);
                    prop_assert_eq!(set.features.count(), expected);
                    prop_assert_eq!(set.features.dim(), m * n * 2);
                    prop_assert_eq!(local_feature_count(h, w, m, n, s), Some(expected));
                    for &(r, c) in &set.anchors {
                        prop_assert!(r + m <= h && c + n <= w);
                    }
                }
                Err(_) => prop_assert!(m > h || n > w),
            }
        }

        /// Perturbing only window i in layer t changes the next layer only in
        /// a neighbourhood that contains map(i).
        #[test]
        fn correspondence_soundness(seed in 0u64..500, pad in 0usize..2, ar in 0usize..6, ac in 0usize..6) {
            let mut rng = Lcg::new(seed);
            let conv = ConvLayerSpec::seeded(3, 3, 2, 3, 1, pad, &mut rng).unwrap();
            let base = ActivationTensor::from_fn(8, 8, 2, |_, _, _| rng.next_weight()).unwrap();
            let set = extract_local_features(&base, 3, 3, 1).unwrap();
            let next = conv_forward(&base, &conv).unwrap();
            let cmap = correspondence_map(&set, &conv, (next.height(), next.width())).unwrap();
            let i = set.anchors.iter().position(|a| *a == (ar, ac)).unwrap();
            let bumped = ActivationTensor::from_fn(8, 8, 2, |r, c, k| {
                let inside = r >= ar && r < ar + 3 && c >= ac && c < ac + 3;
                base.get(r, c, k) + if inside { 1.0 } else { 0.0 }
            }).unwrap();
            let after = conv_forward(&bumped, &conv).unwrap();
            let (ur, uc) = cmap.units[i];
            let mut changed_at_unit = false;
            for r in 0..next.height() {
                for c in 0..next.width() {
                    for k in 0..3 {
                        if next.get(r, c, k) != after.get(r, c, k) {
                            prop_assert!(r.abs_diff(ur) <= 2 && c.abs_diff(uc) <= 2);
                            if (r, c) == (ur, uc) { changed_at_unit = true; }
                        }
                    }
                }
            }
            prop_assert!(changed_at_unit || conv.weights().iter().all(|w| *w == 0.0));
        }
    }
}
