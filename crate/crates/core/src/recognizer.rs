//! CNN classifiers used to score generated images.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{LabeledDataset, Sampler};
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Activation, Mode, Network, NetworkBuilder, Optimizer, OptimizerConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_KIND: &str = "recognizer";
/// Samples per forward pass during inference.
pub const INFERENCE_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Two 5x5 conv/pool stages, dense 1024, for 28x28 digits.
    MnistCnn,
    /// Three 3x3 conv/pool stages, dense 100, for 32x32 glyphs.
    DeepCnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub architecture: Architecture,
    pub classes: usize,
    pub input_shape: [usize; 3],
}

impl ClassifierSpec {
    pub fn mnist(classes: usize) -> Self {
        ClassifierSpec {
            architecture: Architecture::MnistCnn,
            classes,
            input_shape: [1, 28, 28],
        }
    }

    pub fn deep(classes: usize) -> Self {
        ClassifierSpec {
            architecture: Architecture::DeepCnn,
            classes,
            input_shape: [1, 32, 32],
        }
    }

    /// The architecture suited to a dataset's image shape.
    pub fn for_images(shape: [usize; 3], classes: usize) -> Result<Self> {
        match shape {
            [1, 28, 28] => Ok(Self::mnist(classes)),
            [1, 32, 32] => Ok(Self::deep(classes)),
            _ => Err(Error::Config(format!("no recognizer for images of shape {shape:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    spec: ClassifierSpec,
    net: Network<f32>,
}

fn leaky() -> Activation {
    Activation::leaky()
}

pub fn build_mnist_cnn(classes: usize, input_shape: [usize; 3], seed: u64) -> Result<Classifier> {
    if input_shape != [1, 28, 28] {
        return Err(Error::Config(format!("MNIST recognizer expects 1x28x28 input, got {input_shape:?}")));
    }
    Classifier::build(
        ClassifierSpec {
            architecture: Architecture::MnistCnn,
            classes,
            input_shape,
        },
        seed,
    )
}

pub fn build_deep_cnn(classes: usize, input_shape: [usize; 3], seed: u64) -> Result<Classifier> {
    Classifier::build(
        ClassifierSpec {
            architecture: Architecture::DeepCnn,
            classes,
            input_shape,
        },
        seed,
    )
}

impl Classifier {
    pub fn build(spec: ClassifierSpec, seed: u64) -> Result<Self> {
        if spec.classes < 2 {
            return Err(Error::Config(format!("a classifier needs at least 2 classes, got {}", spec.classes)));
        }
        let [c, h, w] = spec.input_shape;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = match spec.architecture {
            Architecture::MnistCnn => {
                if c != 1 || h != 28 || w != 28 {
                    return Err(Error::Config(format!(
                        "MNIST recognizer expects 1x28x28 input, got {:?}",
                        spec.input_shape
                    )));
                }
                NetworkBuilder::new("mnist-cnn", &spec.input_shape)
                    .conv2d(64, 5, 1, 2)
                    .activation(leaky())
                    .max_pool(2, 2)
                    .conv2d(32, 5, 1, 2)
                    .activation(leaky())
                    .max_pool(2, 2)
                    .flatten()
                    .dense(1024)
                    .activation(leaky())
                    .dense(spec.classes)
                    .build(&mut rng)?
            }
            Architecture::DeepCnn => {
                if c != 1 || h / 8 != 4 || w / 8 != 4 {
                    return Err(Error::Config(format!(
                        "deep recognizer needs input that pools to 4x4 after three stages, got {:?}",
                        spec.input_shape
                    )));
                }
                NetworkBuilder::new("deep-cnn", &spec.input_shape)
                    .conv2d(64, 3, 1, 1)
                    .activation(leaky())
                    .max_pool(2, 2)
                    .conv2d(32, 3, 1, 1)
                    .activation(leaky())
                    .max_pool(2, 2)
                    .conv2d(32, 3, 1, 1)
                    .activation(leaky())
                    .max_pool(2, 2)
                    .flatten()
                    .dense(100)
                    .activation(leaky())
                    .dense(spec.classes)
                    .build(&mut rng)?
            }
        };
        Ok(Classifier { spec, net })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    pub fn logits(&mut self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.net.predict(images, INFERENCE_CHUNK)
    }

    /// Class probabilities, computed in double precision.
    pub fn probabilities(&mut self, images: &Tensor<f32>) -> Result<Tensor<f64>> {
        let logits = self.logits(images)?.cast::<f64>();
        let k = self.spec.classes;
        let mut out = logits.data().to_vec();
        for row in out.chunks_mut(k) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - m).exp());
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Tensor::new(logits.shape().to_vec(), out)
    }

    /// Top-1 classes, ties to the lowest index.
    pub fn predict(&mut self, images: &Tensor<f32>) -> Result<Vec<usize>> {
        Ok(self.logits(images)?.argmax_rows())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, serde_json::to_value(self.spec)?);
        ck.add_store("", self.net.params());
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Input(format!("checkpoint holds a `{}`, not a recognizer", ck.kind)));
        }
        let spec: ClassifierSpec = serde_json::from_value(ck.hyper.clone())?;
        let mut clf = Classifier::build(spec, 0)?;
        clf.net.load_values(&ck.tensors, "")?;
        Ok(clf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Fraction of samples whose top-1 prediction equals the label.
pub fn accuracy(clf: &mut Classifier, images: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || images.batch_len() == 0 {
        return Err(Error::Input("accuracy of an empty batch".into()));
    }
    if images.batch_len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.batch_len(),
            labels.len()
        )));
    }
    let pred = clf.predict(images)?;
    Ok(hit_rate(&pred, labels))
}

pub fn hit_rate(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            lr: 0.001,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Running accuracy over the final epoch's minibatches (full train set
    /// when no epochs ran).
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean loss of every minibatch step.
    pub loss_curve: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainReport {
    /// `key=value` lines; the loss curve is a comma-separated list.
    pub fn to_record(&self) -> String {
        let curve: Vec<String> = self.loss_curve.iter().map(|v| format!("{v:.6}")).collect();
        format!(
            "train_accuracy={:.6}\ntest_accuracy={:.6}\nepochs={}\nseed={}\nloss_curve={}\n",
            self.train_accuracy,
            self.test_accuracy,
            self.epochs,
            self.seed,
            curve.join(",")
        )
    }
}

/// Minibatch Adam training with softmax cross-entropy.
pub fn train_classifier(
    clf: &mut Classifier,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    for ds in [train, test] {
        if ds.classes() != clf.spec.classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, classifier {}",
                ds.classes(),
                clf.spec.classes
            )));
        }
        if ds.image_shape() != clf.spec.input_shape {
            return Err(Error::Config(format!(
                "dataset images {:?} do not fit classifier input {:?}",
                ds.image_shape(),
                clf.spec.input_shape
            )));
        }
    }
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.lr))?;
    let mut sampler = Sampler::new(train, cfg.batch_size, cfg.seed)?;
    let steps_per_epoch = if train.len() >= cfg.batch_size {
        train.len() / cfg.batch_size
    } else {
        1
    };
    let mut curve = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    // running accuracy over the last epoch's minibatches, as seen before each update
    let last_epoch = cfg.epochs.saturating_sub(1) * steps_per_epoch;
    let (mut seen, mut hits) = (0usize, 0usize);
    for step in 0..cfg.epochs * steps_per_epoch {
        let batch = sampler.next_batch();
        let mut tape = Tape::new();
        let bound = clf.net.bind(&mut tape, true);
        let x = tape.constant(batch.images);
        let logits = clf.net.forward(&mut tape, &bound, x, Mode::Train)?;
        let loss = tape.softmax_cross_entropy(logits, &batch.labels)?;
        let value = tape.scalar(loss)? as f64;
        if !value.is_finite() || tape.non_finite().is_some() {
            return Err(Error::Diverged(format!("classifier loss {value} at step {step}")));
        }
        curve.push(value);
        if step >= last_epoch {
            let predicted = tape.value(logits).argmax_rows();
            hits += predicted.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
            seen += batch.labels.len();
        }
        let mut grads = tape.backward(loss)?;
        let g = clf.net.gradients(&bound, &mut grads);
        opt.step(clf.net.params_mut(), &g)?;
        if step % 100 == 0 {
            log::debug!("recognizer step {step}: loss {value:.4}");
        }
    }
    let train_accuracy = if seen > 0 {
        hits as f64 / seen as f64
    } else {
        accuracy(clf, train.images(), train.labels())?
    };
    let test_accuracy = accuracy(clf, test.images(), test.labels())?;
    Ok(TrainReport {
        train_accuracy,
        test_accuracy,
        loss_curve: curve,
        epochs: cfg.epochs,
        seed: cfg.seed,
    })
}
