//! End-to-end protocol: train a recognizer on real data, fit a generative
//! model, produce a labeled generated set and score both with the
//! recognizer.

pub mod grid;
pub mod sink;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_image_folder, load_mnist, make_synthetic_proxy, split_per_class, FolderSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{FitSettings, GenerativeModel, Hyper, ModelKind};
use crate::recognizer::{self, Classifier, ClassifierSpec, TrainConfig, TrainReport};
use crate::tensor::Tensor;

pub use grid::{export_grid, layout, render_grid};
pub use sink::{append_results_csv, read_report_json, write_curves_csv, write_report_json, RESULTS_HEADER};

fn default_train_per_class() -> usize {
    250
}
fn default_test_per_class() -> usize {
    20
}
fn default_size() -> usize {
    32
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    0.001
}
fn default_epochs() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Directory with the four official IDX files.
    Mnist { dir: PathBuf },
    /// Procedural glyph classes standing in for a scanned character corpus.
    Proxy {
        classes: usize,
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        /// Seed of the glyph shapes themselves.
        #[serde(default)]
        glyph_seed: u64,
    },
    /// `root/<class>/<image>` folders.
    Folder {
        root: PathBuf,
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_size")]
        size: usize,
    },
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Mnist { .. } => "mnist".into(),
            DatasetSpec::Proxy { classes, .. } => format!("proxy{classes}"),
            DatasetSpec::Folder { root, .. } => root
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "folder".into()),
        }
    }

    fn check_paths(&self) -> Result<()> {
        let (field, path) = match self {
            DatasetSpec::Mnist { dir } => ("dataset.dir", dir),
            DatasetSpec::Folder { root, .. } => ("dataset.root", root),
            DatasetSpec::Proxy { .. } => return Ok(()),
        };
        if !path.is_dir() {
            return Err(Error::Config(format!("{field}: `{}` is not a directory", path.display())));
        }
        Ok(())
    }

    /// `(train, test)` splits; `data_seed` drives any per-class sampling.
    pub fn load(&self, data_seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        self.check_paths()?;
        match self {
            DatasetSpec::Mnist { dir } => load_mnist(dir),
            DatasetSpec::Proxy {
                classes,
                train_per_class,
                test_per_class,
                glyph_seed,
            } => {
                let all = make_synthetic_proxy(*classes, train_per_class + test_per_class, *glyph_seed)?;
                split_per_class(&all, *train_per_class, *test_per_class, data_seed)
            }
            DatasetSpec::Folder {
                root,
                train_per_class,
                test_per_class,
                size,
            } => load_image_folder(
                root,
                FolderSpec {
                    train_per_class: *train_per_class,
                    test_per_class: *test_per_class,
                    size: *size,
                    seed: data_seed,
                },
            ),
        }
    }
}

/// A generative model kind, or the pass-through stub whose "generated" set
/// is the real test split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BenchModel {
    Identity,
    Kind(ModelKind),
}

impl FromStr for BenchModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("identity") {
            Ok(BenchModel::Identity)
        } else {
            s.parse().map(BenchModel::Kind)
        }
    }
}

impl TryFrom<String> for BenchModel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BenchModel> for String {
    fn from(m: BenchModel) -> String {
        m.to_string()
    }
}

impl fmt::Display for BenchModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchModel::Identity => f.write_str("identity"),
            BenchModel::Kind(k) => write!(f, "{k}"),
        }
    }
}

/// Independent seeds for data order, parameter init and latent / noise
/// sampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
    pub eval: u64,
}

impl Seeds {
    /// Seed of the prior draws at generation time, kept apart from the
    /// training-noise stream that also derives from `eval`.
    pub fn generation(&self) -> u64 {
        self.eval ^ 0x5DEE_CE66_D1CE_F00D
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizerSettings {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Reused if it exists, written after training otherwise.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl Default for RecognizerSettings {
    fn default() -> Self {
        RecognizerSettings {
            epochs: default_epochs(),
            seed: 0,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub dataset: DatasetSpec,
    pub model: BenchModel,
    /// Model hyper-parameters; the learning rate comes from `lr`.
    #[serde(default)]
    pub hyper: Hyper,
    /// Training steps of the generative model.
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Learning rate of both the recognizer and the generative model.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seeds: Seeds,
    /// Images generated per class by conditional models; defaults to the
    /// per-class count of the real test split.
    #[serde(default)]
    pub per_class: Option<usize>,
    /// Fit the generative model on only the first this-many training images.
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub recognizer: RecognizerSettings,
    pub output_dir: PathBuf,
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: BenchConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations: must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size: must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr: must be positive, got {}", self.lr)));
        }
        if self.per_class == Some(0) {
            return Err(Error::Config("per_class: must be at least 1".into()));
        }
        if self.train_subset == Some(0) {
            return Err(Error::Config("train_subset: must be at least 1".into()));
        }
        if let BenchModel::Kind(k) = self.model {
            if !k.class_addressable() {
                return Err(Error::Config(format!(
                    "model: {k} cannot produce images of a chosen class; use the `train` and `generate` commands for it"
                )));
            }
        }
        self.model_hyper().validate()?;
        self.dataset.check_paths()
    }

    /// `hyper` with the shared learning rate applied.
    pub fn model_hyper(&self) -> Hyper {
        Hyper {
            lr: self.lr,
            ..self.hyper.clone()
        }
    }

    /// SHA-256 over the canonical (key-sorted) JSON form.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(&serde_json::to_value(self)?)?;
        Ok(Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub dataset: String,
    /// Recognizer accuracy on the generated set.
    pub gen_acc: f64,
    /// Recognizer accuracy on the real test split.
    pub orig_acc: f64,
    /// `confusion[true][predicted]` over the generated set.
    pub confusion: Vec<Vec<usize>>,
    pub generated: usize,
    pub iterations: usize,
    pub seeds: Seeds,
    /// Mean of the last 100 steps of every loss curve.
    pub final_losses: BTreeMap<String, f64>,
    pub train_seconds: f64,
    pub config_hash: String,
}

impl BenchReport {
    /// The report with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        BenchReport {
            train_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Everything a benchmark run produces besides files.
pub struct BenchRun {
    pub report: BenchReport,
    pub curves: BTreeMap<String, Vec<f64>>,
    pub generated: Tensor<f32>,
    pub labels: Vec<usize>,
    pub model: Option<GenerativeModel<f32>>,
    pub recognizer: Classifier,
    /// Present when the recognizer was trained in this run.
    pub recognizer_report: Option<TrainReport>,
}

/// Loads the recognizer checkpoint if one exists, trains (and stores) it
/// otherwise.
pub fn prepare_recognizer(
    settings: &RecognizerSettings,
    train: &LabeledDataset,
    test: &LabeledDataset,
    lr: f64,
    batch_size: usize,
) -> Result<(Classifier, Option<TrainReport>)> {
    let spec = ClassifierSpec::for_images(train.image_shape(), train.classes())?;
    if let Some(path) = settings.checkpoint.as_ref().filter(|p| p.exists()) {
        let clf = Classifier::load(path)?;
        if *clf.spec() != spec {
            return Err(Error::Config(format!(
                "recognizer.checkpoint: `{}` holds a {:?}, the dataset needs {spec:?}",
                path.display(),
                clf.spec()
            )));
        }
        return Ok((clf, None));
    }
    let mut clf = Classifier::build(spec, settings.seed)?;
    let cfg = TrainConfig {
        epochs: settings.epochs,
        lr,
        batch_size,
        seed: settings.seed,
    };
    let report = recognizer::train_classifier(&mut clf, train, test, &cfg)?;
    if let Some(path) = &settings.checkpoint {
        clf.save(path)?;
    }
    Ok((clf, Some(report)))
}

/// Labels for conditional generation: `per_class` of each class, or as many
/// as the real test split holds.
pub fn generation_labels(test: &LabeledDataset, per_class: Option<usize>) -> Vec<usize> {
    test.class_counts()
        .iter()
        .enumerate()
        .flat_map(|(c, &count)| std::iter::repeat_n(c, per_class.unwrap_or(count)))
        .collect()
}

/// Reconstructions of the test split (labels inherited) for autoencoders,
/// label-conditioned samples otherwise.
pub fn generated_set(
    model: &mut GenerativeModel<f32>,
    test: &LabeledDataset,
    per_class: Option<usize>,
    seed: u64,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let kind = model.kind();
    if kind.is_reconstructor() {
        Ok((model.reconstruct(test.images(), None)?, test.labels().to_vec()))
    } else if kind.is_conditional() {
        let labels = generation_labels(test, per_class);
        Ok((model.generate_labeled(&labels, seed)?, labels))
    } else {
        Err(Error::Config(format!("{kind} cannot produce images of a chosen class")))
    }
}

pub fn confusion(pred: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &l) in pred.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

fn tail_means(curves: &BTreeMap<String, Vec<f64>>) -> BTreeMap<String, f64> {
    curves
        .iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(k, c)| {
            let tail = &c[c.len().saturating_sub(100)..];
            (k.clone(), tail.iter().sum::<f64>() / tail.len() as f64)
        })
        .collect()
}

/// Runs the protocol without writing any output files.
pub fn execute(cfg: &BenchConfig) -> Result<BenchRun> {
    cfg.validate()?;
    let (train, test) = cfg.dataset.load(cfg.seeds.data)?;
    let (mut clf, recognizer_report) = prepare_recognizer(&cfg.recognizer, &train, &test, cfg.lr, cfg.batch_size)?;
    let orig_acc = recognizer::accuracy(&mut clf, test.images(), test.labels())?;

    let started = Instant::now();
    let (generated, labels, model, curves) = match cfg.model {
        BenchModel::Identity => (test.images().clone(), test.labels().to_vec(), None, BTreeMap::new()),
        BenchModel::Kind(kind) => {
            let fit_on = match cfg.train_subset {
                Some(n) => train.head(n)?,
                None => train.clone(),
            };
            let mut model =
                GenerativeModel::<f32>::new(kind, cfg.model_hyper(), train.image_shape(), train.classes(), cfg.seeds.model)?;
            let fit = model.fit(
                &fit_on,
                &FitSettings {
                    iterations: cfg.iterations,
                    batch_size: cfg.batch_size,
                    data_seed: cfg.seeds.data,
                    noise_seed: cfg.seeds.eval,
                    checkpoint: None,
                    checkpoint_every: 0,
                },
            )?;
            let (images, labels) = generated_set(&mut model, &test, cfg.per_class, cfg.seeds.generation())?;
            (images, labels, Some(model), fit.curves)
        }
    };
    let train_seconds = started.elapsed().as_secs_f64();

    let pred = clf.predict(&generated)?;
    let gen_acc = recognizer::hit_rate(&pred, &labels);
    let report = BenchReport {
        model: cfg.model.to_string(),
        dataset: cfg.dataset.name(),
        gen_acc,
        orig_acc,
        confusion: confusion(&pred, &labels, test.classes()),
        generated: labels.len(),
        iterations: cfg.iterations,
        seeds: cfg.seeds,
        final_losses: tail_means(&curves),
        train_seconds,
        config_hash: cfg.hash()?,
    };
    Ok(BenchRun {
        report,
        curves,
        generated,
        labels,
        model,
        recognizer: clf,
        recognizer_report,
    })
}

/// Up to `per_row` generated images of each of the first ten classes, one
/// class per row.
pub fn sample_sheet(images: &Tensor<f32>, labels: &[usize], per_row: usize) -> (Tensor<f32>, usize, usize) {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1).min(10);
    let mut picked = Vec::new();
    let mut rows = 0;
    for c in 0..classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).take(per_row).collect();
        if idx.is_empty() {
            continue;
        }
        rows += 1;
        for slot in 0..per_row {
            picked.push(idx.get(slot).copied());
        }
    }
    let sample_len = images.sample_len();
    let mut data = Vec::with_capacity(picked.len() * sample_len);
    for p in &picked {
        match p {
            Some(i) => data.extend_from_slice(images.sample(*i)),
            None => data.extend(std::iter::repeat_n(0.0, sample_len)),
        }
    }
    let mut shape = images.shape().to_vec();
    shape[0] = picked.len();
    let sheet = Tensor::new(shape, data).expect("sheet sized from its own samples");
    (sheet, rows.max(1), per_row.max(1))
}

/// [`execute`], then writes the config snapshot, checkpoints, report JSON,
/// a `results.csv` row, loss curves and a sample grid to `output_dir`.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    let run = execute(cfg)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&serde_json::to_value(cfg)?)?)
        .map_err(|e| Error::io(&cfg_path, e))?;
    run.recognizer.save(&dir.join("recognizer.ckpt"))?;
    if let Some(model) = &run.model {
        model.save(&dir.join("model.ckpt"))?;
    }
    write_report_json(&run.report, &dir.join("report.json"))?;
    append_results_csv(&dir.join("results.csv"), &run.report)?;
    if !run.curves.is_empty() {
        write_curves_csv(&run.curves, &dir.join("losses.csv"))?;
    }
    let (sheet, rows, cols) = sample_sheet(&run.generated, &run.labels, 10);
    export_grid(&sheet, rows, cols, &dir.join("samples.png"))?;
    Ok(run.report)
}
