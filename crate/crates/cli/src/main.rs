//! `genbench` command line: train, generate, evaluate, benchmark, grid.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 when a
//! run fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use genbench::bench::{self, BenchConfig, DatasetSpec, RecognizerSettings, Seeds};
use genbench::data::idx::{load_idx, read_idx_images};
use genbench::data::{write_idx_images, write_idx_labels, LabeledDataset, Split};
use genbench::models::{FitSettings, GenerativeModel, Hyper, ModelKind};
use genbench::recognizer;
use genbench::Tensor;

#[derive(Parser)]
#[command(name = "genbench", version, about = "Train autoencoder / GAN variants and score their images with a CNN recognizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a generative model and write its checkpoint.
    Train(TrainArgs),
    /// Sample (or reconstruct) images from a model checkpoint.
    Generate(GenerateArgs),
    /// Train or load a recognizer and score an image set.
    Evaluate(EvaluateArgs),
    /// Full protocol: recognizer, generative model, generated-set accuracy.
    Benchmark(BenchmarkArgs),
    /// Tile IDX images into a PNG grid.
    Grid(GridArgs),
}

/// Settings shared by the config-driven commands. Flags override the file.
#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set hyper.beta=0`; values parse as
    /// JSON, falling back to a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Directory with the MNIST IDX files.
    #[arg(long, conflicts_with = "proxy_classes")]
    mnist_dir: Option<PathBuf>,
    /// Use the synthetic glyph proxy with this many classes.
    #[arg(long)]
    proxy_classes: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_model: Option<u64>,
    #[arg(long)]
    seed_eval: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Where the trained model is written.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Trained model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Expected model kind; refused if the checkpoint holds another.
    #[arg(long)]
    model: Option<String>,
    /// Class to generate (conditional models only).
    #[arg(long)]
    label: Option<usize>,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reconstruct the images of this IDX file instead of sampling.
    #[arg(long)]
    reconstruct: Option<PathBuf>,
    /// Labels for `--reconstruct` (conditional models).
    #[arg(long)]
    reconstruct_labels: Option<PathBuf>,
    #[arg(long, default_value = "samples.png")]
    grid: PathBuf,
    /// Also write `<prefix>-images-idx3-ubyte` (and labels when known).
    #[arg(long)]
    idx_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Recognizer checkpoint: loaded if present, written after training.
    #[arg(long)]
    recognizer: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// IDX images to score; the real test split when absent.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Write the scores as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Recognizer checkpoint shared across runs.
    #[arg(long)]
    recognizer: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// IDX image file.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Only the first this-many images.
    #[arg(long)]
    count: Option<usize>,
}

/// Bad invocation or configuration: exit 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainJob {
    dataset: DatasetSpec,
    model: ModelKind,
    #[serde(default)]
    hyper: Hyper,
    iterations: usize,
    #[serde(default = "default_batch")]
    batch_size: usize,
    #[serde(default = "default_lr")]
    lr: f64,
    #[serde(default)]
    seeds: Seeds,
    #[serde(default)]
    train_subset: Option<usize>,
    checkpoint: PathBuf,
    /// Intermediate checkpoints every this-many steps; 0 writes only the last.
    #[serde(default)]
    checkpoint_every: usize,
    /// Loss curves CSV; next to the checkpoint by default.
    #[serde(default)]
    losses: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateJob {
    dataset: DatasetSpec,
    #[serde(default)]
    recognizer: RecognizerSettings,
    #[serde(default = "default_batch")]
    batch_size: usize,
    #[serde(default = "default_lr")]
    lr: f64,
    #[serde(default)]
    seeds: Seeds,
}

fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    0.001
}

fn set_path(root: &mut Value, key: &str, v: Value) -> anyhow::Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if p.is_empty() {
            return Err(usage(format!("--set: empty segment in `{key}`")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| usage(format!("--set {key}: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), v);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| json!({}));
    }
    unreachable!("split yields at least one part")
}

impl Common {
    /// Config file (or `{}`) with every flag applied.
    fn document(&self) -> anyhow::Result<Value> {
        let mut doc = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("config: {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("config: {}: {e}", p.display())))?
            }
            None => json!({}),
        };
        if !doc.is_object() {
            return Err(usage("config: top level must be a JSON object"));
        }
        if let Some(dir) = &self.mnist_dir {
            doc["dataset"] = json!({ "kind": "mnist", "dir": dir });
        }
        if let Some(k) = self.proxy_classes {
            doc["dataset"] = json!({ "kind": "proxy", "classes": k });
        }
        let flags = [
            ("batch_size", self.batch_size.map(Value::from)),
            ("lr", self.lr.map(Value::from)),
            ("seeds.data", self.seed_data.map(Value::from)),
            ("seeds.model", self.seed_model.map(Value::from)),
            ("seeds.eval", self.seed_eval.map(Value::from)),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                set_path(&mut doc, k, v)?;
            }
        }
        for s in &self.sets {
            let (k, raw) = s.split_once('=').ok_or_else(|| usage(format!("--set `{s}`: expected KEY=VALUE")))?;
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, k, v)?;
        }
        Ok(doc)
    }
}

fn parse_job<T: for<'de> Deserialize<'de>>(doc: Value) -> anyhow::Result<T> {
    serde_json::from_value(doc).map_err(|e| usage(format!("config: {e}")))
}

fn parse_kind(s: &str) -> anyhow::Result<ModelKind> {
    s.parse().map_err(|e: genbench::Error| usage(format!("model: {e}")))
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut doc = args.common.document()?;
    if let Some(m) = &args.model {
        doc["model"] = Value::String(parse_kind(m)?.to_string());
    }
    if let Some(n) = args.iterations {
        doc["iterations"] = n.into();
    }
    if let Some(c) = &args.checkpoint {
        doc["checkpoint"] = json!(c);
    }
    let job: TrainJob = parse_job(doc)?;
    let hyper = Hyper { lr: job.lr, ..job.hyper };
    let (train, _) = job.dataset.load(job.seeds.data)?;
    let data = match job.train_subset {
        Some(n) => train.head(n)?,
        None => train,
    };
    let mut model = GenerativeModel::<f32>::new(job.model, hyper, data.image_shape(), data.classes(), job.seeds.model)?;
    let settings = FitSettings {
        iterations: job.iterations,
        batch_size: job.batch_size,
        data_seed: job.seeds.data,
        noise_seed: job.seeds.eval,
        checkpoint: Some(job.checkpoint.clone()),
        checkpoint_every: job.checkpoint_every,
    };
    let every = (job.iterations / 20).max(1);
    let report = model.fit_with(&data, &settings, |m| {
        if (m.step + 1) % every == 0 {
            let parts: Vec<String> = m.losses.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
            log::info!("step {}: {}", m.step + 1, parts.join(" "));
        }
        Ok(())
    })?;
    let losses = job.losses.unwrap_or_else(|| job.checkpoint.with_extension("losses.csv"));
    bench::write_curves_csv(&report.curves, &losses)?;
    println!(
        "trained {} for {} steps in {:.1}s; checkpoint {}",
        job.model,
        report.iterations,
        report.wall_seconds,
        job.checkpoint.display()
    );
    Ok(())
}

fn read_images(path: &Path) -> anyhow::Result<Tensor<f32>> {
    let (n, rows, cols, px) = read_idx_images(path)?;
    Ok(Tensor::new(vec![n, 1, rows, cols], px.iter().map(|&b| b as f32 / 255.0).collect())?)
}

fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    let ck = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| usage("checkpoint: required (--checkpoint <path>)"))?;
    if !ck.is_file() {
        return Err(usage(format!("checkpoint: `{}` does not exist", ck.display())));
    }
    let mut model = GenerativeModel::<f32>::load(ck)?;
    if let Some(m) = &args.model {
        let want = parse_kind(m)?;
        if want != model.kind() {
            return Err(usage(format!("model: checkpoint holds a {}, not a {want}", model.kind())));
        }
    }
    let (images, labels) = match &args.reconstruct {
        Some(src) => {
            let x = read_images(src)?;
            let labels = match &args.reconstruct_labels {
                Some(p) => Some(load_idx(src, p)?.labels().to_vec()),
                None => None,
            };
            (model.reconstruct(&x, labels.as_deref())?, labels)
        }
        None => {
            if args.count == 0 {
                return Err(usage("count: must be at least 1"));
            }
            let labels = model.generation_labels(args.count, args.label)?;
            let images = model.generate(args.count, args.label, args.seed)?;
            (images, model.kind().is_conditional().then_some(labels))
        }
    };
    let n = images.batch_len();
    let (rows, cols) = bench::layout(n);
    bench::export_grid(&images, rows, cols, &args.grid)?;
    if let Some(prefix) = &args.idx_out {
        let with = |suffix: &str| PathBuf::from(format!("{}-{suffix}", prefix.display()));
        write_idx_images(&with("images-idx3-ubyte"), &images)?;
        if let Some(l) = &labels {
            write_idx_labels(&with("labels-idx1-ubyte"), l)?;
        }
    }
    println!("{n} images from {}; grid {}", model.kind(), args.grid.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let mut doc = args.common.document()?;
    if let Some(r) = &args.recognizer {
        set_path(&mut doc, "recognizer.checkpoint", json!(r))?;
    }
    if let Some(e) = args.epochs {
        set_path(&mut doc, "recognizer.epochs", e.into())?;
    }
    let job: EvaluateJob = parse_job(doc)?;
    let (train, test) = job.dataset.load(job.seeds.data)?;
    let (mut clf, trained) = bench::prepare_recognizer(&job.recognizer, &train, &test, job.lr, job.batch_size)?;
    if let Some(r) = &trained {
        log::info!("recognizer trained: test accuracy {:.4}", r.test_accuracy);
    }
    let scored = match (&args.images, &args.labels) {
        (Some(i), Some(l)) => {
            let ds = load_idx(i, l)?;
            let (x, y) = (ds.images().clone(), ds.labels().to_vec());
            LabeledDataset::new(x, y, test.classes(), Split::Test)
                .map_err(|e| usage(format!("images: {e}")))?
        }
        _ => test,
    };
    let pred = clf.predict(scored.images())?;
    let acc = recognizer::hit_rate(&pred, scored.labels());
    let out = json!({
        "accuracy": acc,
        "count": scored.len(),
        "confusion": bench::confusion(&pred, scored.labels(), scored.classes()),
    });
    if let Some(p) = &args.report {
        if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        std::fs::write(p, serde_json::to_string_pretty(&out)?).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("accuracy={acc:.4} over {} images", scored.len());
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> anyhow::Result<()> {
    let mut doc = args.common.document()?;
    if let Some(m) = &args.model {
        doc["model"] = Value::String(m.clone());
    }
    if let Some(n) = args.iterations {
        doc["iterations"] = n.into();
    }
    if let Some(o) = &args.output_dir {
        doc["output_dir"] = json!(o);
    }
    if let Some(r) = &args.recognizer {
        set_path(&mut doc, "recognizer.checkpoint", json!(r))?;
    }
    let cfg: BenchConfig = parse_job(doc)?;
    let report = bench::run_benchmark(&cfg)?;
    println!(
        "{} on {}: generated {:.2}% / original {:.2}% ({} images); report {}",
        report.model,
        report.dataset,
        report.gen_acc * 100.0,
        report.orig_acc * 100.0,
        report.generated,
        cfg.output_dir.join("report.json").display()
    );
    Ok(())
}

fn grid(args: GridArgs) -> anyhow::Result<()> {
    let mut images = read_images(&args.images)?;
    if let Some(n) = args.count {
        let n = n.min(images.batch_len());
        images = images.select(&(0..n).collect::<Vec<_>>());
    }
    let n = images.batch_len();
    let (rows, cols) = match (args.rows, args.cols) {
        (Some(r), Some(c)) => (r, c),
        (Some(r), None) => (r, n.div_ceil(r.max(1))),
        (None, Some(c)) => (n.div_ceil(c.max(1)), c),
        (None, None) => bench::layout(n),
    };
    bench::export_grid(&images, rows, cols, &args.out)?;
    println!("{n} images as {rows}x{cols}: {}", args.out.display());
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<Usage>() {
        return 1;
    }
    match e.downcast_ref::<genbench::Error>() {
        Some(g) if g.is_config() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Grid(a) => grid(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
