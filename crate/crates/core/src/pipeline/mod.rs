//! End-to-end runs over a dataset manifest: forward, extraction, PCA,
//! pooling, normalization, optional sign quantization, Gram matrices, SVM
//! training and evaluation.
//!
//! With a working directory, every stage writes its artifacts to
//! `<stage>-<key>/`, where the key hashes the stage's own parameters
//! together with the key of the stage before it. A directory containing a
//! `done` marker is reused instead of recomputed.

pub mod config;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnn::NetworkSpec;
use crate::encode::{pooled_dim, PoolingScheme, ResolvedEncoder};
use crate::error::{Error, Result};
use crate::io::{load_matrix, read_file, save_matrix, write_file};
use crate::multires::{assemble, extract_parts, ImagePart, Level, ResolutionModels};
use crate::postproc::{
    decode_sign_vectors, encode_sign_vectors, pca_fit_with, sign_quantize, subsample_rows, PackedSignVector, PcaModel,
    PcaOptions,
};
use crate::svm::{
    accuracy, average_precision, cross_kernel, cross_kernel_packed, gram_matrix, gram_matrix_packed, svm_predict,
    svm_train_sets, with_workers, GramMatrix, LabelSets, SvmModel, SvmOptions,
};
use crate::tensor::FeatureMatrix;

pub use config::{parse_preset, PipelineConfig, Preset};
pub use manifest::{load_input, DatasetManifest, ManifestEntry, Split};

pub const TIMING_COLUMNS: [&str; 3] = ["extraction", "pooling", "total"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub extraction_ms: f64,
    pub pooling_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTiming {
    pub id: String,
    #[serde(flatten)]
    pub row: TimingRow,
}

/// Per-image wall time of network forward plus local-feature extraction,
/// and of projection, pooling and normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub columns: Vec<String>,
    pub mean: TimingRow,
    pub pca_fit_ms: f64,
    pub images: Vec<ImageTiming>,
}

impl Timing {
    fn from_images(images: Vec<ImageTiming>, pca_fit_ms: f64) -> Self {
        let n = images.len().max(1) as f64;
        let mut mean = TimingRow::default();
        for i in &images {
            mean.extraction_ms += i.row.extraction_ms / n;
            mean.pooling_ms += i.row.pooling_ms / n;
            mean.total_ms += i.row.total_ms / n;
        }
        Self {
            columns: TIMING_COLUMNS.iter().map(|s| s.to_string()).collect(),
            mean,
            pca_fit_ms,
            images,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of test images whose top-scoring class is among their labels.
    pub accuracy: f64,
    pub train_accuracy: f64,
    /// Test AP per class; `None` for classes without test positives.
    pub per_class_ap: Vec<Option<f64>>,
    pub mean_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub dir: Option<String>,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub scheme: String,
    pub layer_pair: [usize; 2],
    pub parts: Vec<String>,
    pub dim: usize,
    pub packed_bytes_per_image: Option<usize>,
    pub classes: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub timing: Timing,
    pub stages: Vec<StageRecord>,
}

impl Report {
    /// Equal in everything except wall-clock timings and cache provenance.
    pub fn same_results(&self, other: &Report) -> bool {
        self.config_hash == other.config_hash
            && self.scheme == other.scheme
            && self.layer_pair == other.layer_pair
            && self.parts == other.parts
            && self.dim == other.dim
            && self.packed_bytes_per_image == other.packed_bytes_per_image
            && self.classes == other.classes
            && (self.n_train, self.n_test) == (other.n_train, other.n_test)
            && self.metrics == other.metrics
    }
}

fn hash_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(&h.finalize()[..8])
}

fn stage_key(prev: &str, name: &str, params: &impl Serialize) -> String {
    let json = serde_json::to_vec(params).expect("stage params serialize");
    hash_parts(&[prev.as_bytes(), name.as_bytes(), &json])
}

struct StageDir {
    path: Option<PathBuf>,
}

impl StageDir {
    fn new(workdir: Option<&Path>, name: &str, key: &str) -> Self {
        Self {
            path: workdir.map(|w| w.join(format!("{name}-{key}"))),
        }
    }

    fn done(&self) -> bool {
        self.path.as_ref().is_some_and(|p| p.join("done").is_file())
    }

    fn file(&self, name: &str) -> Option<PathBuf> {
        self.path.as_ref().map(|p| p.join(name))
    }

    fn begin(&self) -> Result<()> {
        if let Some(p) = &self.path {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        match self.file("done") {
            Some(p) => write_file(&p, b""),
            None => Ok(()),
        }
    }

    fn record(&self, name: &str, cached: bool) -> StageRecord {
        StageRecord {
            name: name.into(),
            dir: self.path.as_ref().map(|p| p.display().to_string()),
            cached,
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    write_file(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| Error::Corruption(format!("{}: {e}", path.display())))
}

/// Pooled representations of every manifest entry, split-wise in manifest
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMeta {
    pub parts: Vec<String>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
    pub meta: EncodedMeta,
}

struct Prepared {
    net: NetworkSpec,
    resolved: ResolvedEncoder,
    extract_key: String,
}

fn prepare(config: &PipelineConfig, manifest: &DatasetManifest) -> Result<Prepared> {
    config.validate()?;
    let net_text = fs::read_to_string(&config.network)
        .map_err(|e| Error::Config(format!("network {}: {e}", config.network.display())))?;
    let net =
        NetworkSpec::load(&config.network).map_err(|e| e.in_stage("network", config.network.display().to_string()))?;
    let resolved = config.encoder.resolve(&net)?;
    let inputs: Vec<Vec<u8>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let bytes = read_file(&e.path).map_err(|err| err.in_stage("load", &e.id))?;
            Ok(Sha256::digest(&bytes).to_vec())
        })
        .collect::<Result<_>>()?;
    let mut h = Sha256::new();
    for (e, digest) in manifest.entries.iter().zip(&inputs) {
        h.update(e.id.as_bytes());
        h.update([e.split as u8]);
        for l in &e.labels {
            h.update(manifest.classes[*l].as_bytes());
            h.update([0]);
        }
        h.update(digest);
    }
    let data_hash = hex::encode(h.finalize());
    let extract_key = stage_key(
        &data_hash,
        "extract",
        &(
            &net_text,
            config.encoder.layer,
            resolved.window,
            resolved.stride,
            config.encoder.scheme == PoolingScheme::CrossLayer,
            &config.resolution,
        ),
    );
    Ok(Prepared {
        net,
        resolved,
        extract_key,
    })
}

fn pca_key(config: &PipelineConfig, extract_key: &str) -> String {
    stage_key(
        extract_key,
        "pca",
        &(config.pca_dim, config.pca_whiten, config.pca_sample_cap, config.seed),
    )
}

fn pool_key(config: &PipelineConfig, pca_key: &str) -> String {
    stage_key(pca_key, "pool", &config.encoder)
}

fn extract_all(
    config: &PipelineConfig,
    manifest: &DatasetManifest,
    prep: &Prepared,
) -> Result<Vec<(Vec<ImagePart>, f64)>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let start = Instant::now();
            let image = load_input(&e.path).map_err(|err| err.in_stage("load", &e.id))?;
            let parts = extract_parts(&image, &prep.net, &config.resolution, &config.encoder, &prep.resolved)
                .map_err(|err| err.in_stage("extract", &e.id))?;
            Ok((parts, start.elapsed().as_secs_f64() * 1e3))
        })
        .collect()
}

fn fit_level(
    config: &PipelineConfig,
    manifest: &DatasetManifest,
    extracted: &[(Vec<ImagePart>, f64)],
    level: Level,
    dim: usize,
) -> Result<Option<PcaModel>> {
    let mut sample: Option<FeatureMatrix> = None;
    for (entry, (parts, _)) in manifest.entries.iter().zip(extracted) {
        if entry.split != Split::Train {
            continue;
        }
        for p in parts.iter().filter(|p| p.level == level) {
            let f = &p.features.set.features;
            let s = sample.get_or_insert_with(|| FeatureMatrix::empty(f.dim()).expect("feature dim is positive"));
            for row in f.rows() {
                s.push_row(row)?;
            }
        }
    }
    let Some(sample) = sample else {
        return Ok(None);
    };
    let sample = subsample_rows(&sample, config.pca_sample_cap, config.seed);
    let label = match level {
        Level::Whole => "whole",
        Level::Block => "blocks",
    };
    pca_fit_with(
        &sample,
        dim,
        PcaOptions {
            whiten: config.pca_whiten,
        },
    )
    .map(Some)
    .map_err(|e| e.in_stage("pca-fit", label))
}

/// Runs extraction, PCA and pooling, reusing cached stages when possible.
fn encode_cached(
    config: &PipelineConfig,
    manifest: &DatasetManifest,
    prep: &Prepared,
    workdir: Option<&Path>,
    stages: &mut Vec<StageRecord>,
) -> Result<(EncodedDataset, String)> {
    let pca_k = pca_key(config, &prep.extract_key);
    let pool_k = pool_key(config, &pca_k);
    let pool_dir = StageDir::new(workdir, "pool", &pool_k);
    if pool_dir.done() {
        let meta: EncodedMeta = read_json(&pool_dir.file("meta.json").unwrap())?;
        let train = load_matrix(pool_dir.file("train.cpm").unwrap())?;
        let test = load_matrix(pool_dir.file("test.cpm").unwrap())?;
        stages.push(pool_dir.record("pool", true));
        return Ok((EncodedDataset { train, test, meta }, pool_k));
    }

    let extract_dir = StageDir::new(workdir, "extract", &prep.extract_key);
    let extracted = extract_all(config, manifest, prep)?;
    extract_dir.begin()?;
    if let Some(p) = extract_dir.file("summary.json") {
        let summary: Vec<_> = manifest
            .entries
            .iter()
            .zip(&extracted)
            .map(|(e, (parts, _))| {
                let p: Vec<_> = parts
                    .iter()
                    .map(|p| {
                        (
                            p.label.clone(),
                            p.features.set.len(),
                            p.features.set.features.dim(),
                            p.features.spatial_units(),
                        )
                    })
                    .collect();
                (e.id.clone(), p)
            })
            .collect();
        write_json(&p, &summary)?;
    }
    extract_dir.finish()?;
    stages.push(extract_dir.record("extract", false));

    let pca_dir = StageDir::new(workdir, "pca", &pca_k);
    let mut models = ResolutionModels::default();
    let mut pca_fit_ms = 0.0;
    if let Some(dim) = config.pca_dim {
        let levels = [(Level::Whole, "whole.cppca"), (Level::Block, "blocks.cppca")];
        if pca_dir.done() {
            for (level, name) in levels {
                let path = pca_dir.file(name).unwrap();
                if path.is_file() {
                    let m = PcaModel::load(&path)?;
                    match level {
                        Level::Whole => models.whole = Some(m),
                        Level::Block => models.blocks = Some(m),
                    }
                }
            }
            stages.push(pca_dir.record("pca", true));
        } else {
            let start = Instant::now();
            models.whole = fit_level(config, manifest, &extracted, Level::Whole, dim)?;
            models.blocks = fit_level(config, manifest, &extracted, Level::Block, dim)?;
            pca_fit_ms = start.elapsed().as_secs_f64() * 1e3;
            pca_dir.begin()?;
            for (m, (_, name)) in [&models.whole, &models.blocks].into_iter().zip(levels) {
                if let (Some(m), Some(path)) = (m, pca_dir.file(name)) {
                    m.save(path)?;
                }
            }
            pca_dir.finish()?;
            stages.push(pca_dir.record("pca", false));
        }
    }

    let pooled = manifest
        .entries
        .par_iter()
        .zip(&extracted)
        .map(|(e, (parts, extract_ms))| {
            let start = Instant::now();
            let rep = assemble(parts, &config.encoder, &models).map_err(|err| err.in_stage("pool", &e.id))?;
            let pooling_ms = start.elapsed().as_secs_f64() * 1e3;
            let timing = ImageTiming {
                id: e.id.clone(),
                row: TimingRow {
                    extraction_ms: *extract_ms,
                    pooling_ms,
                    total_ms: extract_ms + pooling_ms,
                },
            };
            Ok((rep, timing))
        })
        .collect::<Result<Vec<_>>>()?;
    drop(extracted);

    let dim = pooled[0].0.values.len();
    let mut train = FeatureMatrix::empty(dim.max(1))?;
    let mut test = FeatureMatrix::empty(dim.max(1))?;
    for (e, (rep, _)) in manifest.entries.iter().zip(&pooled) {
        match e.split {
            Split::Train => train.push_row(&rep.values)?,
            Split::Test => test.push_row(&rep.values)?,
        }
    }
    let parts = pooled[0].0.parts.iter().map(|p| p.0.clone()).collect();
    let timing = Timing::from_images(pooled.into_iter().map(|(_, t)| t).collect(), pca_fit_ms);
    let encoded = EncodedDataset {
        train,
        test,
        meta: EncodedMeta { parts, timing },
    };
    pool_dir.begin()?;
    if pool_dir.path.is_some() {
        save_matrix(&encoded.train, pool_dir.file("train.cpm").unwrap())?;
        save_matrix(&encoded.test, pool_dir.file("test.cpm").unwrap())?;
        write_json(&pool_dir.file("meta.json").unwrap(), &encoded.meta)?;
    }
    pool_dir.finish()?;
    stages.push(pool_dir.record("pool", false));
    Ok((encoded, pool_k))
}

/// Pooled representations of the whole manifest without touching disk.
pub fn encode_dataset(config: &PipelineConfig, manifest: &DatasetManifest) -> Result<EncodedDataset> {
    with_workers(config.workers, || {
        let prep = prepare(config, manifest)?;
        Ok(encode_cached(config, manifest, &prep, None, &mut Vec::new())?.0)
    })?
}

/// Kernel inputs: float reps, or sign vectors when quantizing.
enum Kernels {
    Float,
    Packed(Vec<PackedSignVector>, Vec<PackedSignVector>),
}

fn f32_rounded(g: GramMatrix) -> Result<GramMatrix> {
    GramMatrix::from_matrix(&g.to_matrix()?)
}

fn rows_f32_rounded(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(|v| f64::from(v as f32)).collect())
        .collect()
}

pub fn run_pipeline(config: &PipelineConfig, manifest: &DatasetManifest, workdir: Option<&Path>) -> Result<Report> {
    with_workers(config.workers, || run_inner(config, manifest, workdir))?
}

fn run_inner(config: &PipelineConfig, manifest: &DatasetManifest, workdir: Option<&Path>) -> Result<Report> {
    let prep = prepare(config, manifest)?;
    let mut stages = Vec::new();
    let (encoded, pool_k) = encode_cached(config, manifest, &prep, workdir, &mut stages)?;
    let dim = encoded.train.dim();

    let quant_k = stage_key(&pool_k, "quantize", &config.quantize);
    let kernels = if config.quantize {
        let dir = StageDir::new(workdir, "quantize", &quant_k);
        let (train, test) = if dir.done() {
            stages.push(dir.record("quantize", true));
            (
                decode_sign_vectors(&read_file(&dir.file("train.cps").unwrap())?)?,
                decode_sign_vectors(&read_file(&dir.file("test.cps").unwrap())?)?,
            )
        } else {
            let train: Vec<_> = encoded.train.rows().map(sign_quantize).collect();
            let test: Vec<_> = encoded.test.rows().map(sign_quantize).collect();
            dir.begin()?;
            if let (Some(a), Some(b)) = (dir.file("train.cps"), dir.file("test.cps")) {
                write_file(&a, &encode_sign_vectors(&train)?)?;
                write_file(&b, &encode_sign_vectors(&test)?)?;
            }
            dir.finish()?;
            stages.push(dir.record("quantize", false));
            (train, test)
        };
        Kernels::Packed(train, test)
    } else {
        Kernels::Float
    };

    let gram_dir = StageDir::new(workdir, "gram", &quant_k);
    let (gram, test_rows) = if gram_dir.done() {
        stages.push(gram_dir.record("gram", true));
        let g = GramMatrix::from_matrix(&load_matrix(gram_dir.file("train.cpm").unwrap())?)?;
        let t = load_matrix(gram_dir.file("test.cpm").unwrap())?;
        let rows = t.rows().map(|r| r.iter().map(|v| f64::from(*v)).collect()).collect();
        (g, rows)
    } else {
        let (g, rows) = match &kernels {
            Kernels::Float => (
                gram_matrix(&encoded.train),
                cross_kernel(&encoded.test, &encoded.train)?,
            ),
            Kernels::Packed(train, test) => (gram_matrix_packed(train)?, cross_kernel_packed(test, train)?),
        };
        let g = f32_rounded(g)?;
        let rows = rows_f32_rounded(rows);
        gram_dir.begin()?;
        if gram_dir.path.is_some() {
            save_matrix(&g.to_matrix()?, gram_dir.file("train.cpm").unwrap())?;
            let flat: Vec<f32> = rows.iter().flatten().map(|v| *v as f32).collect();
            save_matrix(
                &FeatureMatrix::new(rows.len(), g.n.max(1), flat)?,
                gram_dir.file("test.cpm").unwrap(),
            )?;
        }
        gram_dir.finish()?;
        stages.push(gram_dir.record("gram", false));
        (g, rows)
    };

    let train_entries: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
    let test_entries: Vec<&ManifestEntry> = manifest.split(Split::Test).collect();
    let labels = LabelSets {
        classes: manifest.classes.clone(),
        members: train_entries.iter().map(|e| e.labels.clone()).collect(),
    };
    let train_k = stage_key(&quant_k, "train", &(config.svm_c, config.svm_tol));
    let train_dir = StageDir::new(workdir, "train", &train_k);
    let model = if train_dir.done() {
        stages.push(train_dir.record("train", true));
        SvmModel::load(train_dir.file("model.cpsvm").unwrap())?
    } else {
        let opts = SvmOptions {
            c: config.svm_c,
            tol: config.svm_tol,
            ..SvmOptions::default()
        };
        let model = svm_train_sets(&gram, &labels, opts).map_err(|e| e.in_stage("train", "training split"))?;
        train_dir.begin()?;
        if let Some(p) = train_dir.file("model.cpsvm") {
            model.save(p)?;
        }
        train_dir.finish()?;
        stages.push(train_dir.record("train", false));
        model
    };

    let train_pred: Vec<usize> = (0..gram.n)
        .map(|i| svm_predict(&model, gram.row(i)).map(|p| p.label))
        .collect::<Result<_>>()?;
    let test_pred = test_rows
        .iter()
        .zip(&test_entries)
        .map(|(row, e)| svm_predict(&model, row).map_err(|err| err.in_stage("predict", &e.id)))
        .collect::<Result<Vec<_>>>()?;

    let hit_rate = |pred: &[usize], entries: &[&ManifestEntry]| -> Result<f64> {
        // accuracy() over (hit, 1) pairs handles the multi-label case too
        let hits: Vec<usize> = pred
            .iter()
            .zip(entries)
            .map(|(p, e)| usize::from(e.labels.contains(p)))
            .collect();
        accuracy(&hits, &vec![1; hits.len()])
    };
    let labels_pred: Vec<usize> = test_pred.iter().map(|p| p.label).collect();
    let mut per_class_ap = Vec::with_capacity(manifest.classes.len());
    for k in 0..manifest.classes.len() {
        let scores: Vec<f64> = test_pred.iter().map(|p| p.scores[k]).collect();
        let positive: Vec<bool> = test_entries.iter().map(|e| e.labels.contains(&k)).collect();
        per_class_ap.push(if positive.iter().any(|p| *p) {
            Some(average_precision(&scores, &positive)?)
        } else {
            None
        });
    }
    let present: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let metrics = Metrics {
        accuracy: hit_rate(&labels_pred, &test_entries)?,
        train_accuracy: hit_rate(&train_pred, &train_entries)?,
        mean_ap: present.iter().sum::<f64>() / present.len().max(1) as f64,
        per_class_ap,
    };

    let report = Report {
        config_hash: train_k.clone(),
        scheme: config.encoder.scheme.to_string(),
        layer_pair: [config.encoder.layer, config.encoder.layer + 1],
        parts: encoded.meta.parts.clone(),
        dim,
        packed_bytes_per_image: config.quantize.then(|| PackedSignVector::byte_len(dim)),
        classes: manifest.classes.clone(),
        n_train: train_entries.len(),
        n_test: test_entries.len(),
        metrics,
        timing: encoded.meta.timing.clone(),
        stages,
    };
    if let Some(w) = workdir {
        let dir = w.join(format!("report-{train_k}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_json(&dir.join("report.json"), &report)?;
        let mut tsv = String::from("id\tpredicted\tscores\n");
        for (e, p) in test_entries.iter().zip(&test_pred) {
            let scores: Vec<String> = p.scores.iter().map(|s| format!("{s:.6}")).collect();
            tsv.push_str(&format!(
                "{}\t{}\t{}\n",
                e.id,
                manifest.classes[p.label],
                scores.join(",")
            ));
        }
        write_file(&dir.join("predictions.tsv"), tsv.as_bytes())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scheme: String,
    pub accuracy: f64,
    pub mean_ap: f64,
    pub dim: usize,
    pub extraction_ms: f64,
    pub pooling_ms: f64,
    pub total_ms: f64,
}

impl CompareRow {
    pub fn from_report(r: &Report) -> Self {
        Self {
            scheme: r.scheme.clone(),
            accuracy: r.metrics.accuracy,
            mean_ap: r.metrics.mean_ap,
            dim: r.dim,
            extraction_ms: r.timing.mean.extraction_ms,
            pooling_ms: r.timing.mean.pooling_ms,
            total_ms: r.timing.mean.total_ms,
        }
    }
}

/// Runs the same pipeline once per scheme.
pub fn compare_schemes(
    base: &PipelineConfig,
    schemes: &[PoolingScheme],
    manifest: &DatasetManifest,
    workdir: Option<&Path>,
) -> Result<Vec<CompareRow>> {
    if schemes.len() < 2 {
        return Err(Error::Contract(format!(
            "comparison needs at least 2 schemes, got {}",
            schemes.len()
        )));
    }
    schemes
        .iter()
        .map(|s| {
            let mut cfg = base.clone();
            cfg.encoder.scheme = s.clone();
            run_pipeline(&cfg, manifest, workdir)
                .map(|r| CompareRow::from_report(&r))
                .map_err(|e| e.in_stage("compare", s.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scheme: String,
    pub dim: usize,
    pub images: usize,
    pub timing: Timing,
}

/// Feature extraction and pooling times only; no classifier.
pub fn bench(config: &PipelineConfig, manifest: &DatasetManifest) -> Result<BenchReport> {
    let encoded = encode_dataset(config, manifest)?;
    Ok(BenchReport {
        scheme: config.encoder.scheme.to_string(),
        dim: encoded.train.dim(),
        images: manifest.entries.len(),
        timing: encoded.meta.timing,
    })
}

/// Expected pooled dimension for a config, without running anything.
pub fn expected_dim(config: &PipelineConfig, net: &NetworkSpec) -> Result<usize> {
    let r = config.encoder.resolve(net)?;
    let next = net
        .conv_at(r.pair.next_conv_stage)
        .expect("pair points at a conv stage");
    let raw = r.window.0 * r.window.1 * next.in_depth;
    let d = config.pca_dim.unwrap_or(raw);
    let parts = usize::from(config.resolution.include_whole_image)
        + if config.resolution.has_blocks() {
            config.resolution.blocks_m * config.resolution.blocks_n
        } else {
            0
        };
    Ok(parts * pooled_dim(&config.encoder.scheme, d, next.out_depth))
}
