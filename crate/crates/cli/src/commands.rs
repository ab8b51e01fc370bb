use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crosspool::cnn::{run_network, run_network_prefix, NetworkSpec};
use crosspool::encode::{extract_part, pool_part};
use crosspool::io::{load_matrix, read_file, save_matrix, save_tensor, write_file};
use crosspool::pipeline::{
    bench, compare_schemes, load_input, run_pipeline, BenchReport, DatasetManifest, PipelineConfig, Report,
};
use crosspool::postproc::{
    decode_sign_vectors, encode_sign_vectors, pca_fit_with, sign_quantize, subsample_rows, PackedSignVector, PcaModel,
    PcaOptions,
};
use crosspool::svm::{
    cross_kernel, cross_kernel_packed, gram_matrix, gram_matrix_packed, svm_predict, svm_train_sets, GramMatrix,
    LabelSets, SvmModel, SvmOptions,
};
use crosspool::synth::{write_dataset, SynthParams};
use crosspool::{extract_local_features, EncoderConfig, Error, FeatureMatrix, PoolingScheme, Result};

use crate::{Cli, Command, ConfigArgs};

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers.filter(|w| *w > 0) {
        // ignore a second initialization, e.g. from tests running in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let seed = cli.seed;
    let workdir = cli.workdir.as_deref();
    match cli.command {
        Command::Forward {
            network,
            input,
            out_dir,
        } => forward(&network, &input, &out_dir),
        Command::Extract {
            network,
            input,
            layer,
            window,
            stride,
            out,
        } => extract(&network, &input, layer, window, stride, &out),
        Command::PcaFit {
            input,
            dim,
            whiten,
            sample_cap,
            out,
        } => pca_fit_cmd(&input, dim, whiten, sample_cap, seed.unwrap_or(0), &out),
        Command::Pool {
            network,
            input,
            layer,
            scheme,
            window,
            stride,
            pca,
            no_power,
            l2,
            out,
        } => {
            let enc = EncoderConfig {
                layer,
                window,
                stride,
                scheme,
                power_normalize: !no_power,
                l2_normalize: l2,
                ..EncoderConfig::default()
            };
            pool(&network, &input, &enc, pca.as_deref(), &out)
        }
        Command::Quantize { input, out } => quantize(&input, &out),
        Command::Gram { train, test, out } => gram(&train, test.as_deref(), &out),
        Command::Train {
            gram,
            labels,
            c,
            tol,
            out,
        } => train(&gram, &labels, c, tol, &out),
        Command::Predict { model, kernel } => predict(&model, &kernel),
        Command::Run { config, manifest, json } => {
            let cfg = build_config(&config, seed, cli.workers)?;
            let manifest = DatasetManifest::load(&manifest)?;
            let report = run_pipeline(&cfg, &manifest, workdir)?;
            if json {
                println!("{}", to_json(&report)?);
            } else {
                print!("{}", summarize(&report, workdir));
            }
            Ok(())
        }
        Command::Compare {
            config,
            manifest,
            schemes,
            json,
        } => {
            let cfg = build_config(&config, seed, cli.workers)?;
            let manifest = DatasetManifest::load(&manifest)?;
            let schemes = schemes
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(str::parse)
                .collect::<Result<Vec<PoolingScheme>>>()?;
            let rows = compare_schemes(&cfg, &schemes, &manifest, workdir)?;
            if json {
                println!("{}", to_json(&rows)?);
            } else {
                println!("scheme\taccuracy\tmean_ap\tdim\textraction_ms\tpooling_ms\ttotal_ms");
                for r in rows {
                    println!(
                        "{}\t{:.4}\t{:.4}\t{}\t{:.3}\t{:.3}\t{:.3}",
                        r.scheme, r.accuracy, r.mean_ap, r.dim, r.extraction_ms, r.pooling_ms, r.total_ms
                    );
                }
            }
            Ok(())
        }
        Command::Bench { config, manifest, json } => {
            let cfg = build_config(&config, seed, cli.workers)?;
            let manifest = DatasetManifest::load(&manifest)?;
            let report = bench(&cfg, &manifest)?;
            if json {
                println!("{}", to_json(&report)?);
            } else {
                print!("{}", bench_table(&report));
            }
            Ok(())
        }
        Command::Synth {
            out,
            train_per_class,
            test_per_class,
        } => {
            let params = SynthParams {
                train_per_class,
                test_per_class,
                ..SynthParams::default()
            };
            write_dataset(&out, &params, seed.unwrap_or(7))?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn build_config(args: &ConfigArgs, seed: Option<u64>, workers: Option<usize>) -> Result<PipelineConfig> {
    let mut cfg = match (&args.config, &args.network) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(net)) => PipelineConfig::new(net),
        (None, None) => return Err(Error::Config("pass --config or --network".into())),
    };
    if let (Some(_), Some(net)) = (&args.config, &args.network) {
        cfg.network = net.clone();
    }
    if let Some(p) = &args.preset {
        cfg.apply_preset(p)?;
    }
    let e = &mut cfg.encoder;
    e.layer = args.layer.unwrap_or(e.layer);
    e.window = args.window.or(e.window);
    e.stride = args.stride.or(e.stride);
    if let Some(s) = &args.scheme {
        e.scheme = s.clone();
    }
    if args.no_pca {
        cfg.pca_dim = None;
    } else if args.pca_dim.is_some() {
        cfg.pca_dim = args.pca_dim;
    }
    cfg.quantize |= args.quantize;
    cfg.svm_c = args.svm_c.unwrap_or(cfg.svm_c);
    cfg.svm_tol = args.svm_tol.unwrap_or(cfg.svm_tol);
    if let Some((m, n)) = args.blocks {
        cfg.resolution.blocks_m = m;
        cfg.resolution.blocks_n = n;
    }
    cfg.resolution.overlap_fraction = args.overlap.unwrap_or(cfg.resolution.overlap_fraction);
    if args.no_whole {
        cfg.resolution.include_whole_image = false;
    }
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.workers = workers.unwrap_or(cfg.workers);
    cfg.validate()?;
    Ok(cfg)
}

fn to_json(value: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

fn summarize(r: &Report, workdir: Option<&Path>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scheme\t{}", r.scheme);
    let _ = writeln!(s, "layers\t{}-{}", r.layer_pair[0], r.layer_pair[1]);
    let _ = writeln!(s, "parts\t{}", r.parts.join(","));
    let _ = writeln!(s, "dim\t{}", r.dim);
    if let Some(b) = r.packed_bytes_per_image {
        let _ = writeln!(s, "packed_bytes\t{b}");
    }
    let _ = writeln!(s, "train/test\t{}/{}", r.n_train, r.n_test);
    let _ = writeln!(s, "accuracy\t{:.4}", r.metrics.accuracy);
    let _ = writeln!(s, "mean_ap\t{:.4}", r.metrics.mean_ap);
    for (name, ap) in r.classes.iter().zip(&r.metrics.per_class_ap) {
        match ap {
            Some(v) => {
                let _ = writeln!(s, "ap[{name}]\t{v:.4}");
            }
            None => {
                let _ = writeln!(s, "ap[{name}]\t-");
            }
        }
    }
    let m = &r.timing.mean;
    let _ = writeln!(
        s,
        "ms/image\textraction {:.3}\tpooling {:.3}\ttotal {:.3}",
        m.extraction_ms, m.pooling_ms, m.total_ms
    );
    if let Some(w) = workdir {
        let _ = writeln!(s, "report\t{}", w.join(format!("report-{}", r.config_hash)).display());
    }
    s
}

fn bench_table(r: &BenchReport) -> String {
    let mut s = format!(
        "# scheme={} dim={} images={} pca_fit_ms={:.3}\n",
        r.scheme, r.dim, r.images, r.timing.pca_fit_ms
    );
    let cols: Vec<String> = r.timing.columns.iter().map(|c| format!("{c}_ms")).collect();
    let _ = writeln!(s, "id\t{}", cols.join("\t"));
    let row = |s: &mut String, id: &str, t: &crosspool::pipeline::TimingRow| {
        let _ = writeln!(
            s,
            "{id}\t{:.3}\t{:.3}\t{:.3}",
            t.extraction_ms, t.pooling_ms, t.total_ms
        );
    };
    for img in &r.timing.images {
        row(&mut s, &img.id, &img.row);
    }
    row(&mut s, "mean", &r.timing.mean);
    s
}

fn forward(network: &Path, input: &Path, out_dir: &Path) -> Result<()> {
    let net = NetworkSpec::load(network)?;
    let image = load_input(input)?;
    let outputs = run_network(&image, &net)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    for (i, (t, stage)) in outputs.iter().zip(net.stages()).enumerate() {
        save_tensor(t, out_dir.join(format!("stage-{i:02}.cpt")))?;
        let (h, w, d) = t.dims();
        let kind = match stage {
            crosspool::cnn::Stage::Conv(_) => "conv",
            crosspool::cnn::Stage::Relu => "relu",
            crosspool::cnn::Stage::MaxPool { .. } => "maxpool",
        };
        println!("{i}\t{kind}\t{h}x{w}x{d}");
    }
    Ok(())
}

fn extract(
    network: &Path,
    input: &Path,
    layer: usize,
    window: Option<(usize, usize)>,
    stride: Option<usize>,
    out: &Path,
) -> Result<()> {
    let net = NetworkSpec::load(network)?;
    let pair = net.cross_layer_pair(layer)?;
    let next = net.conv_at(pair.next_conv_stage).expect("pair points at a conv stage");
    let (wh, ww) = window.unwrap_or((next.kernel_h, next.kernel_w));
    let stride = stride.unwrap_or(next.stride);
    let image = load_input(input)?;
    let mut outputs = run_network_prefix(&image, &net, pair.features_stage + 1)?;
    let layer_t = outputs.pop().expect("prefix is nonempty");
    let set = extract_local_features(&layer_t, wh, ww, stride)?;
    save_matrix(&set.features, out)?;
    println!("{} features of dim {}", set.len(), set.features.dim());
    Ok(())
}

fn pca_fit_cmd(inputs: &[PathBuf], dim: usize, whiten: bool, cap: usize, seed: u64, out: &Path) -> Result<()> {
    let mut sample: Option<FeatureMatrix> = None;
    for path in inputs {
        let m = load_matrix(path)?;
        match &mut sample {
            None => sample = Some(m),
            Some(s) => {
                for row in m.rows() {
                    s.push_row(row)
                        .map_err(|e| e.in_stage("pca-fit", path.display().to_string()))?;
                }
            }
        }
    }
    let sample = subsample_rows(&sample.expect("clap requires an input"), cap, seed);
    let model = pca_fit_with(&sample, dim, PcaOptions { whiten })?;
    model.save(out)?;
    let kept: f64 = model.eigenvalues.iter().take(dim).sum();
    println!(
        "fit {} rows, dim {} -> {dim}, retained variance {kept:.6}",
        sample.count(),
        sample.dim()
    );
    Ok(())
}

fn pool(network: &Path, inputs: &[PathBuf], enc: &EncoderConfig, pca: Option<&Path>, out: &Path) -> Result<()> {
    let net = NetworkSpec::load(network)?;
    let resolved = enc.resolve(&net)?;
    let model = pca.map(PcaModel::load).transpose()?;
    let mut rows = Vec::with_capacity(inputs.len());
    for path in inputs {
        let id = path.display().to_string();
        let image = load_input(path).map_err(|e| e.in_stage("load", &id))?;
        let part = extract_part(&image, &net, enc, &resolved).map_err(|e| e.in_stage("extract", &id))?;
        rows.push(pool_part(&part, enc, model.as_ref()).map_err(|e| e.in_stage("pool", &id))?);
    }
    let m = FeatureMatrix::from_rows(&rows)?;
    save_matrix(&m, out)?;
    println!("{} representations of dim {}", m.count(), m.dim());
    Ok(())
}

fn quantize(input: &Path, out: &Path) -> Result<()> {
    let m = load_matrix(input)?;
    let packed: Vec<PackedSignVector> = m.rows().map(sign_quantize).collect();
    write_file(out, &encode_sign_vectors(&packed)?)?;
    println!(
        "{} vectors of dim {}, {} bytes each",
        packed.len(),
        m.dim(),
        PackedSignVector::byte_len(m.dim())
    );
    Ok(())
}

enum Reps {
    Float(FeatureMatrix),
    Packed(Vec<PackedSignVector>),
}

fn load_reps(path: &Path) -> Result<Reps> {
    if path.extension().is_some_and(|e| e == "cps") {
        Ok(Reps::Packed(decode_sign_vectors(&read_file(path)?)?))
    } else {
        Ok(Reps::Float(load_matrix(path)?))
    }
}

fn gram(train: &Path, test: Option<&Path>, out: &Path) -> Result<()> {
    let train = load_reps(train)?;
    let m = match test {
        None => match &train {
            Reps::Float(m) => gram_matrix(m),
            Reps::Packed(v) => gram_matrix_packed(v)?,
        }
        .to_matrix()?,
        Some(test) => {
            let rows = match (load_reps(test)?, &train) {
                (Reps::Float(t), Reps::Float(tr)) => cross_kernel(&t, tr)?,
                (Reps::Packed(t), Reps::Packed(tr)) => cross_kernel_packed(&t, tr)?,
                _ => {
                    return Err(Error::Contract(
                        "train and test must both be packed or both float".into(),
                    ))
                }
            };
            let width = rows.first().map_or(1, Vec::len);
            let flat: Vec<f32> = rows.iter().flatten().map(|v| *v as f32).collect();
            FeatureMatrix::new(rows.len(), width, flat)?
        }
    };
    save_matrix(&m, out)?;
    println!("kernel {}x{}", m.count(), m.dim());
    Ok(())
}

/// One line per training row: comma-separated class names.
fn parse_labels(text: &str) -> Result<LabelSets> {
    let mut classes: Vec<String> = Vec::new();
    let mut members = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut ids = Vec::new();
        for name in line.split(',').map(str::trim) {
            if name.is_empty() {
                return Err(Error::Validation(format!("labels line {}: empty label", n + 1)));
            }
            let id = classes.iter().position(|c| c == name).unwrap_or_else(|| {
                classes.push(name.to_string());
                classes.len() - 1
            });
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        members.push(ids);
    }
    Ok(LabelSets { classes, members })
}

fn train(gram: &Path, labels: &Path, c: f64, tol: f64, out: &Path) -> Result<()> {
    let g = GramMatrix::from_matrix(&load_matrix(gram)?)?;
    let text = fs::read_to_string(labels).map_err(|e| Error::Io {
        path: labels.display().to_string(),
        source: e,
    })?;
    let sets = parse_labels(&text)?;
    let model = svm_train_sets(
        &g,
        &sets,
        SvmOptions {
            c,
            tol,
            ..SvmOptions::default()
        },
    )?;
    model.save(out)?;
    println!("{} classes over {} training rows", model.classes.len(), g.n);
    Ok(())
}

fn predict(model: &Path, kernel: &Path) -> Result<()> {
    let model = SvmModel::load(model)?;
    let k = load_matrix(kernel)?;
    println!("row\tlabel\tscores");
    for (i, row) in k.rows().enumerate() {
        let row: Vec<f64> = row.iter().map(|v| f64::from(*v)).collect();
        let p = svm_predict(&model, &row).map_err(|e| e.in_stage("predict", format!("row {i}")))?;
        let scores: Vec<String> = p.scores.iter().map(|s| format!("{s:.6}")).collect();
        println!("{i}\t{}\t{}", model.classes[p.label], scores.join(","));
    }
    Ok(())
}
