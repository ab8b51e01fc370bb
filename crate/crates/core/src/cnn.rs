//! A small convolutional forward engine: convolution, ReLU and max-pooling.
//!
//! It exists to produce consecutive-layer activations whose spatial
//! correspondence is exact, which is all cross-layer pooling needs from a
//! network. Weights are either supplied or drawn from a seeded LCG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::ActivationTensor;

/// 64-bit linear congruential generator (Knuth's MMIX constants).
///
/// Each draw advances `state = state * 6364136223846793005 + 1442695040888963407`
/// and maps the top 53 bits to `[0, 1)`; weights use that value minus 0.5.
#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub const MULTIPLIER: u64 = 6_364_136_223_846_793_005;
    pub const INCREMENT: u64 = 1_442_695_040_888_963_407;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(Self::MULTIPLIER).wrapping_add(Self::INCREMENT);
        self.state
    }

    /// Uniform in `[0, 1)`.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[-0.5, 0.5)`.
    pub fn next_weight(&mut self) -> f32 {
        (self.next_unit() - 0.5) as f32
    }
}

/// Geometry and parameters of one convolution.
///
/// Weights are laid out `[out][kernel_row][kernel_col][in]`, i.e. each filter
/// is stored in the same order as a local feature extracted from a window of
/// the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_depth: usize,
    pub out_depth: usize,
    pub stride: usize,
    pub pad: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvLayerSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        in_depth: usize,
        out_depth: usize,
        stride: usize,
        pad: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || in_depth == 0 || out_depth == 0 || stride == 0 {
            return Err(Error::Validation(format!(
                "conv kernel {kernel_h}x{kernel_w}, depths {in_depth}->{out_depth}, stride {stride}: all must be positive"
            )));
        }
        let expected = out_depth * kernel_h * kernel_w * in_depth;
        if weights.len() != expected {
            return Err(Error::Validation(format!(
                "conv expects {expected} weights, got {}",
                weights.len()
            )));
        }
        if bias.len() != out_depth {
            return Err(Error::Validation(format!(
                "conv expects {out_depth} biases, got {}",
                bias.len()
            )));
        }
        Ok(Self {
            kernel_h,
            kernel_w,
            in_depth,
            out_depth,
            stride,
            pad,
            weights,
            bias,
        })
    }

    /// Draws all weights, then all biases, from `rng`.
    pub fn seeded(
        kernel_h: usize,
        kernel_w: usize,
        in_depth: usize,
        out_depth: usize,
        stride: usize,
        pad: usize,
        rng: &mut Lcg,
    ) -> Result<Self> {
        let n = out_depth * kernel_h * kernel_w * in_depth;
        let weights = (0..n).map(|_| rng.next_weight()).collect();
        let bias = (0..out_depth).map(|_| rng.next_weight()).collect();
        Self::new(kernel_h, kernel_w, in_depth, out_depth, stride, pad, weights, bias)
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn filter_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_depth
    }

    /// Flattened weights of output channel `o`.
    pub fn filter(&self, o: usize) -> &[f32] {
        let len = self.filter_len();
        &self.weights[o * len..(o + 1) * len]
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let h = window_count(height + 2 * self.pad, self.kernel_h, self.stride);
        let w = window_count(width + 2 * self.pad, self.kernel_w, self.stride);
        match (h, w) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::Geometry(format!(
                "{}x{} kernel with pad {} does not fit a {height}x{width} input",
                self.kernel_h, self.kernel_w, self.pad
            ))),
        }
    }
}

/// Number of windows of `size` placed every `stride` within `extent`.
pub(crate) fn window_count(extent: usize, size: usize, stride: usize) -> Option<usize> {
    (size >= 1 && stride >= 1 && size <= extent).then(|| (extent - size) / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Conv(ConvLayerSpec),
    Relu,
    MaxPool { size: usize, stride: usize },
}

impl Stage {
    fn name(&self) -> &'static str {
        match self {
            Stage::Conv(_) => "conv",
            Stage::Relu => "relu",
            Stage::MaxPool { .. } => "maxpool",
        }
    }
}

/// An ordered stack of stages with consistent depths.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input_depth: usize,
    stages: Vec<Stage>,
    seed: u64,
}

impl NetworkSpec {
    pub fn new(input_depth: usize, stages: Vec<Stage>, seed: u64) -> Result<Self> {
        if input_depth == 0 {
            return Err(Error::Validation("network input depth must be positive".into()));
        }
        let mut depth = input_depth;
        for (i, stage) in stages.iter().enumerate() {
            match stage {
                Stage::Conv(conv) => {
                    if conv.in_depth != depth {
                        return Err(Error::Validation(format!(
                            "stage {i} conv expects depth {}, previous stage produces {depth}",
                            conv.in_depth
                        )));
                    }
                    depth = conv.out_depth;
                }
                Stage::MaxPool { size, stride } if *size == 0 || *stride == 0 => {
                    return Err(Error::Validation(format!(
                        "stage {i} maxpool size and stride must be positive"
                    )));
                }
                _ => {}
            }
        }
        Ok(Self {
            input_depth,
            stages,
            seed,
        })
    }

    pub fn builder(input_depth: usize, seed: u64) -> NetworkBuilder {
        NetworkBuilder {
            input_depth,
            depth: input_depth,
            seed,
            rng: Lcg::new(seed),
            stages: Vec::new(),
        }
    }

    pub fn input_depth(&self) -> usize {
        self.input_depth
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stage indices of the conv stages, in order.
    pub fn conv_stage_indices(&self) -> Vec<usize> {
        self.stages
            .iter()
            .enumerate()
            .filter_map(|(i, s)| matches!(s, Stage::Conv(_)).then_some(i))
            .collect()
    }

    /// Output (height, width) after every stage for an input of the given size.
    pub fn stage_dims(&self, height: usize, width: usize) -> Result<Vec<(usize, usize)>> {
        let mut dims = Vec::with_capacity(self.stages.len());
        let (mut h, mut w) = (height, width);
        for stage in &self.stages {
            (h, w) = match stage {
                Stage::Conv(conv) => conv.output_dims(h, w)?,
                Stage::Relu => (h, w),
                Stage::MaxPool { size, stride } => maxpool_dims(h, w, *size, *stride)?,
            };
            dims.push((h, w));
        }
        Ok(dims)
    }

    /// Smallest input extent along one axis for which every stage has a
    /// positive output size.
    pub fn min_input_extent(&self) -> usize {
        (1..=1 << 16)
            .find(|&n| self.stage_dims(n, n).is_ok())
            .unwrap_or(usize::MAX)
    }

    /// Locates the tensors used to pool conv layer `t` (1-based) with the
    /// feature maps of conv layer `t+1`.
    ///
    /// Local features come from the tensor that conv `t+1` convolves, which
    /// must be rectified; indicator maps are the ReLU output directly after
    /// conv `t+1`, taken before any subsequent max-pooling.
    pub fn cross_layer_pair(&self, t: usize) -> Result<LayerPair> {
        let convs = self.conv_stage_indices();
        if t == 0 || t >= convs.len() {
            return Err(Error::Config(format!(
                "layer pair ({t},{}) needs conv layers 1..={} but the network has {}",
                t + 1,
                t + 1,
                convs.len()
            )));
        }
        let next_conv = convs[t];
        let features_stage = next_conv - 1;
        if features_stage < convs[t - 1] {
            return Err(Error::Config(format!("conv {} does not follow conv {t}", t + 1)));
        }
        let rectified = self.stages[convs[t - 1]..=features_stage]
            .iter()
            .any(|s| matches!(s, Stage::Relu));
        if !rectified {
            return Err(Error::Config(format!(
                "layer {t} activations feeding conv {} are not rectified",
                t + 1
            )));
        }
        let indicator_stage = next_conv + 1;
        if !matches!(self.stages.get(indicator_stage), Some(Stage::Relu)) {
            return Err(Error::Config(format!(
                "conv {} must be followed by a relu to serve as indicator maps",
                t + 1
            )));
        }
        Ok(LayerPair {
            t,
            features_stage,
            indicator_stage,
            next_conv_stage: next_conv,
        })
    }

    pub fn conv_at(&self, stage: usize) -> Option<&ConvLayerSpec> {
        match self.stages.get(stage) {
            Some(Stage::Conv(c)) => Some(c),
            _ => None,
        }
    }

    /// Parses the line-oriented network description.
    ///
    /// ```text
    /// # comment
    /// input_depth 3
    /// seed 7
    /// conv kernel=3x3 out=16 stride=1 pad=1
    /// relu
    /// maxpool size=2 stride=2
    /// conv kernel=3x3 out=32 stride=1 pad=1 weights=conv2.cpt
    /// relu
    /// ```
    ///
    /// `stride` defaults to 1 and `pad` to 0. Conv layers without `weights=`
    /// draw weights and biases from one LCG seeded with `seed`, in stage
    /// order. A weights sidecar is a tensor file of shape
    /// `out × (kernel_h·kernel_w·in + 1) × 1`: each row is one filter followed
    /// by its bias. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut input_depth = None;
        let mut seed = 0u64;
        let mut lines = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let head = words.next().unwrap();
            let rest: Vec<&str> = words.collect();
            match head {
                "input_depth" => input_depth = Some(parse_single(&rest, lineno, head)?),
                "seed" => seed = parse_single(&rest, lineno, head)?,
                _ => lines.push((
                    lineno + 1,
                    head.to_string(),
                    rest.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                )),
            }
        }
        let input_depth = input_depth.ok_or_else(|| Error::Config("network spec is missing input_depth".into()))?;
        let mut b = Self::builder(input_depth, seed);
        for (lineno, head, args) in lines {
            let kv = parse_kv(&args, lineno)?;
            let get = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
            let num = |key: &str, default: Option<usize>| -> Result<usize> {
                match get(key) {
                    Some(v) => v
                        .parse()
                        .map_err(|_| Error::Config(format!("line {lineno}: {key}={v} is not an integer"))),
                    None => default.ok_or_else(|| Error::Config(format!("line {lineno}: missing {key}="))),
                }
            };
            match head.as_str() {
                "conv" => {
                    let kernel =
                        get("kernel").ok_or_else(|| Error::Config(format!("line {lineno}: missing kernel=")))?;
                    let (kh, kw) = parse_kernel(kernel, lineno)?;
                    let out = num("out", None)?;
                    let stride = num("stride", Some(1))?;
                    let pad = num("pad", Some(0))?;
                    match get("weights") {
                        Some(p) => {
                            let path = resolve(base_dir, p);
                            let conv = load_conv_weights(&path, kh, kw, b.depth, out, stride, pad)?;
                            b = b.conv_with(conv)?;
                        }
                        None => b = b.conv(kh, kw, out, stride, pad)?,
                    }
                }
                "relu" => b = b.relu(),
                "maxpool" => {
                    let size = num("size", None)?;
                    let stride = num("stride", Some(size))?;
                    b = b.maxpool(size, stride);
                }
                other => {
                    return Err(Error::Config(format!("line {lineno}: unknown stage '{other}'")));
                }
            }
        }
        b.build()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Renders the structure in the text format. Weights are not included;
    /// re-parsing reproduces them only when they were seed-generated.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "input_depth {}", self.input_depth);
        let _ = writeln!(s, "seed {}", self.seed);
        for stage in &self.stages {
            match stage {
                Stage::Conv(c) => {
                    let _ = writeln!(
                        s,
                        "conv kernel={}x{} out={} stride={} pad={}",
                        c.kernel_h, c.kernel_w, c.out_depth, c.stride, c.pad
                    );
                }
                Stage::Relu => s.push_str("relu\n"),
                Stage::MaxPool { size, stride } => {
                    let _ = writeln!(s, "maxpool size={size} stride={stride}");
                }
            }
        }
        s
    }
}

/// Stage indices involved in pooling conv layer `t` by conv layer `t+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPair {
    pub t: usize,
    /// Output of this stage supplies the local features.
    pub features_stage: usize,
    /// Output of this stage supplies the indicator maps.
    pub indicator_stage: usize,
    pub next_conv_stage: usize,
}

pub struct NetworkBuilder {
    input_depth: usize,
    depth: usize,
    seed: u64,
    rng: Lcg,
    stages: Vec<Stage>,
}

impl NetworkBuilder {
    pub fn conv(mut self, kh: usize, kw: usize, out: usize, stride: usize, pad: usize) -> Result<Self> {
        let conv = ConvLayerSpec::seeded(kh, kw, self.depth, out, stride, pad, &mut self.rng)?;
        self.depth = out;
        self.stages.push(Stage::Conv(conv));
        Ok(self)
    }

    pub fn conv_with(mut self, conv: ConvLayerSpec) -> Result<Self> {
        if conv.in_depth != self.depth {
            return Err(Error::Validation(format!(
                "conv expects depth {}, previous stage produces {}",
                conv.in_depth, self.depth
            )));
        }
        self.depth = conv.out_depth;
        self.stages.push(Stage::Conv(conv));
        Ok(self)
    }

    pub fn relu(mut self) -> Self {
        self.stages.push(Stage::Relu);
        self
    }

    pub fn maxpool(mut self, size: usize, stride: usize) -> Self {
        self.stages.push(Stage::MaxPool { size, stride });
        self
    }

    pub fn build(self) -> Result<NetworkSpec> {
        NetworkSpec::new(self.input_depth, self.stages, self.seed)
    }
}

fn parse_single<T: std::str::FromStr>(rest: &[&str], lineno: usize, key: &str) -> Result<T> {
    match rest {
        [v] => v
            .parse()
            .map_err(|_| Error::Config(format!("line {}: bad value '{v}' for {key}", lineno + 1))),
        _ => Err(Error::Config(format!("line {}: {key} takes one value", lineno + 1))),
    }
}

fn parse_kv(args: &[String], lineno: usize) -> Result<Vec<(String, String)>> {
    args.iter()
        .map(|a| {
            a.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected key=value, got '{a}'")))
        })
        .collect()
}

fn parse_kernel(s: &str, lineno: usize) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("line {lineno}: kernel must look like 3x3, got '{s}'"));
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    Ok((h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?))
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_conv_weights(
    path: &Path,
    kh: usize,
    kw: usize,
    in_depth: usize,
    out: usize,
    stride: usize,
    pad: usize,
) -> Result<ConvLayerSpec> {
    let t = io::load_tensor(path)?;
    let filter_len = kh * kw * in_depth;
    if t.dims() != (out, filter_len + 1, 1) {
        return Err(Error::Validation(format!(
            "weights file {} has shape {:?}, expected ({out}, {}, 1)",
            path.display(),
            t.dims(),
            filter_len + 1
        )));
    }
    let mut weights = Vec::with_capacity(out * filter_len);
    let mut bias = Vec::with_capacity(out);
    for row in t.values().chunks_exact(filter_len + 1) {
        weights.extend_from_slice(&row[..filter_len]);
        bias.push(row[filter_len]);
    }
    ConvLayerSpec::new(kh, kw, in_depth, out, stride, pad, weights, bias)
}

/// Writes a conv layer's parameters as a weights sidecar tensor.
pub fn save_conv_weights(conv: &ConvLayerSpec, path: impl AsRef<Path>) -> Result<()> {
    let len = conv.filter_len();
    let mut values = Vec::with_capacity(conv.out_depth * (len + 1));
    for o in 0..conv.out_depth {
        values.extend_from_slice(conv.filter(o));
        values.push(conv.bias[o]);
    }
    let t = ActivationTensor::new(conv.out_depth, len + 1, 1, values)?;
    io::save_tensor(&t, path)
}

/// Zero-padded 2-D convolution.
///
/// Each output value is accumulated in f64 over (kernel row, kernel col,
/// input channel) in that order, then the bias is added.
pub fn conv_forward(input: &ActivationTensor, layer: &ConvLayerSpec) -> Result<ActivationTensor> {
    if input.depth() != layer.in_depth {
        return Err(Error::Validation(format!(
            "conv expects input depth {}, got {}",
            layer.in_depth,
            input.depth()
        )));
    }
    let (in_h, in_w, in_d) = input.dims();
    let (out_h, out_w) = layer.output_dims(in_h, in_w)?;
    let pad = layer.pad as isize;
    let mut values = Vec::with_capacity(out_h * out_w * layer.out_depth);
    for r in 0..out_h {
        for c in 0..out_w {
            let top = (r * layer.stride) as isize - pad;
            let left = (c * layer.stride) as isize - pad;
            for o in 0..layer.out_depth {
                let filter = layer.filter(o);
                let mut acc = 0.0f64;
                for ky in 0..layer.kernel_h {
                    let y = top + ky as isize;
                    if y < 0 || y >= in_h as isize {
                        continue;
                    }
                    for kx in 0..layer.kernel_w {
                        let x = left + kx as isize;
                        if x < 0 || x >= in_w as isize {
                            continue;
                        }
                        let unit = input.unit(y as usize, x as usize);
                        let w = &filter[(ky * layer.kernel_w + kx) * in_d..][..in_d];
                        for (a, b) in unit.iter().zip(w) {
                            acc += f64::from(*a) * f64::from(*b);
                        }
                    }
                }
                values.push((acc + f64::from(layer.bias[o])) as f32);
            }
        }
    }
    ActivationTensor::new(out_h, out_w, layer.out_depth, values)
}

pub fn relu_forward(input: &ActivationTensor) -> ActivationTensor {
    let (h, w, d) = input.dims();
    let values = input.values().iter().map(|v| v.max(0.0)).collect();
    ActivationTensor::new(h, w, d, values)
        .expect("relu preserves shape")
        .mark_rectified_unchecked()
}

fn maxpool_dims(h: usize, w: usize, size: usize, stride: usize) -> Result<(usize, usize)> {
    match (window_count(h, size, stride), window_count(w, size, stride)) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::Geometry(format!(
            "maxpool window {size} (stride {stride}) does not fit a {h}x{w} input"
        ))),
    }
}

/// Per-channel maximum over `size`×`size` windows, no padding.
pub fn maxpool_forward(input: &ActivationTensor, size: usize, stride: usize) -> Result<ActivationTensor> {
    let (in_h, in_w, d) = input.dims();
    let (out_h, out_w) = maxpool_dims(in_h, in_w, size, stride)?;
    let mut values = Vec::with_capacity(out_h * out_w * d);
    let mut best = vec![f32::NEG_INFINITY; d];
    for r in 0..out_h {
        for c in 0..out_w {
            best.fill(f32::NEG_INFINITY);
            for y in r * stride..r * stride + size {
                for x in c * stride..c * stride + size {
                    for (b, v) in best.iter_mut().zip(input.unit(y, x)) {
                        *b = b.max(*v);
                    }
                }
            }
            values.extend_from_slice(&best);
        }
    }
    let out = ActivationTensor::new(out_h, out_w, d, values)?;
    Ok(if input.rectified() {
        out.mark_rectified_unchecked()
    } else {
        out
    })
}

/// Runs every stage and returns each stage's output, in order.
pub fn run_network(input: &ActivationTensor, spec: &NetworkSpec) -> Result<Vec<ActivationTensor>> {
    run_network_prefix(input, spec, spec.stages.len())
}

/// Runs the first `stages` stages only.
pub fn run_network_prefix(
    input: &ActivationTensor,
    spec: &NetworkSpec,
    stages: usize,
) -> Result<Vec<ActivationTensor>> {
    if input.depth() != spec.input_depth {
        return Err(Error::Validation(format!(
            "network expects input depth {}, got {}",
            spec.input_depth,
            input.depth()
        )));
    }
    let mut outputs: Vec<ActivationTensor> = Vec::with_capacity(stages);
    for (i, stage) in spec.stages.iter().take(stages).enumerate() {
        let prev = outputs.last().unwrap_or(input);
        let out = match stage {
            Stage::Conv(conv) => conv_forward(prev, conv),
            Stage::Relu => Ok(relu_forward(prev)),
            Stage::MaxPool { size, stride } => maxpool_forward(prev, *size, *stride),
        }
        .map_err(|e| e.in_stage(&format!("stage {i} ({})", stage.name()), "network input"))?;
        outputs.push(out);
    }
    Ok(outputs)
}
