//! `crosspool` command-line tool.
//!
//! Stage subcommands (`forward` through `predict`) work on single files;
//! `run`, `compare` and `bench` drive the whole pipeline from a config and a
//! dataset manifest.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crosspool::{Error, PoolingScheme};

#[derive(Parser, Debug)]
#[command(name = "crosspool", version, about = "Cross-layer pooled CNN image representations")]
struct Cli {
    /// Seed for PCA subsampling and synthetic data; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Stage cache and report directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a network on one input and save every stage's output.
    Forward {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sliding-window local features of conv layer t.
    Extract {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        layer: usize,
        #[arg(long, value_parser = parse_pair)]
        window: Option<(usize, usize)>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit PCA on stacked local features.
    PcaFit {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        whiten: bool,
        #[arg(long, default_value_t = 100_000)]
        sample_cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool whole-image representations, one row per input.
    Pool {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        layer: usize,
        #[arg(long, default_value = "cross-layer")]
        scheme: PoolingScheme,
        #[arg(long, value_parser = parse_pair)]
        window: Option<(usize, usize)>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        no_power: bool,
        #[arg(long)]
        l2: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sign-quantize representations into packed 2-bit records.
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear kernel among training reps, or test-by-train with `--test`.
    Gram {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-vs-rest SVMs on a precomputed Gram matrix.
    Train {
        #[arg(long)]
        gram: PathBuf,
        /// One line per Gram row, comma-separated class names.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = crosspool::svm::DEFAULT_C)]
        c: f64,
        #[arg(long, default_value_t = crosspool::svm::DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score kernel rows against a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
    },
    /// Full pipeline: extraction, PCA, pooling, kernels, SVM and evaluation.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Print the whole report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the pipeline once per pooling scheme.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Semicolon-separated, e.g. `cross-layer;direct-max;spp:1,2`.
        #[arg(long, default_value = "cross-layer;direct-max;direct-sum-sqrt")]
        schemes: String,
        #[arg(long)]
        json: bool,
    },
    /// Per-image extraction and pooling times.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write the synthetic co-occurrence dataset with a matching net and config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        train_per_class: usize,
        #[arg(long, default_value_t = 100)]
        test_per_class: usize,
    },
}

/// Pipeline overrides, applied on top of `--config`.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// TOML pipeline config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    /// CL-<t><t+1>, optionally suffixed F (2x2 blocks) or C (whole image plus 2x2 blocks).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, value_parser = parse_pair)]
    window: Option<(usize, usize)>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long, conflicts_with = "pca_dim")]
    no_pca: bool,
    #[arg(long)]
    scheme: Option<PoolingScheme>,
    #[arg(long)]
    quantize: bool,
    #[arg(long)]
    svm_c: Option<f64>,
    #[arg(long)]
    svm_tol: Option<f64>,
    #[arg(long, value_parser = parse_pair)]
    blocks: Option<(usize, usize)>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    no_whole: bool,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) => 2,
        Error::Rank { .. } | Error::Numerical(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
