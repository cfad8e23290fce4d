//! Trainable layers stacked into feed-forward networks.

pub mod checkpoint;
pub mod init;
pub mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

pub use optim::{clip_weights, Optimizer, OptimizerConfig, OptimizerKind};

/// Default negative slope for leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    pub fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Identity => x,
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(slope) => tape.leaky_relu(x, T::of(slope))?,
        })
    }

    /// Piecewise-linear and non-decreasing, so `pool(act(x)) == act(pool(x))`
    /// with the same gradient routing; pooling first touches 4x fewer values.
    fn commutes_with_max(self) -> bool {
        matches!(self, Activation::Identity | Activation::Relu | Activation::LeakyRelu(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages updated.
    Train,
    /// Running averages.
    Eval,
    /// Batch statistics, running averages left alone — for a network that
    /// only feeds another network's update.
    BatchStats,
}

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers such as batch-norm running statistics are stored alongside
    /// the weights but never receive gradients.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.params[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Largest absolute entry over trainable tensors.
    pub fn max_abs(&self) -> T {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .fold(T::zero(), |m, p| m.max(p.value.max_abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// Parameters of one network registered on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    /// Binding from explicit tape variables, one slot per parameter (`None`
    /// for buffers).
    pub fn from_vars(vars: Vec<Option<Var>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, param: usize) -> Option<Var> {
        self.vars.get(param).copied().flatten()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Unpool {
        size: usize,
    },
    Activation(Activation),
    Flatten,
    Reshape(Vec<usize>),
}

impl LayerKind {
    /// True for layers that own a weight tensor.
    pub fn is_weighted(&self) -> bool {
        matches!(
            self,
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::ConvTranspose2d { .. }
        )
    }
}

/// Layer description with the per-sample shape it produces.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerInfo {
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Layer {
    kind: LayerKind,
    output_shape: Vec<usize>,
    /// Indices into the parameter store: weight/bias, or scale/shift/mean/var
    /// for batch norm.
    params: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Network<T: Real> {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    params: ParamStore<T>,
}

/// Layer-by-layer description of a network; shapes are checked in
/// [`NetworkBuilder::build`].
#[derive(Clone, Debug)]
pub struct NetworkBuilder {
    name: String,
    input_shape: Vec<usize>,
    specs: Vec<LayerKindSpec>,
}

#[derive(Clone, Debug)]
enum LayerKindSpec {
    Dense(usize),
    Conv2d { out: usize, kernel: usize, stride: usize, padding: usize },
    ConvTranspose2d { out: usize, kernel: usize, stride: usize, padding: usize },
    BatchNorm,
    MaxPool { size: usize, stride: usize },
    Unpool(usize),
    Activation(Activation),
    Flatten,
    Reshape(Vec<usize>),
}

impl NetworkBuilder {
    pub fn new(name: impl Into<String>, input_shape: &[usize]) -> Self {
        NetworkBuilder {
            name: name.into(),
            input_shape: input_shape.to_vec(),
            specs: Vec::new(),
        }
    }

    pub fn dense(mut self, outputs: usize) -> Self {
        self.specs.push(LayerKindSpec::Dense(outputs));
        self
    }

    pub fn conv2d(mut self, out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        self.specs.push(LayerKindSpec::Conv2d {
            out,
            kernel,
            stride,
            padding,
        });
        self
    }

    pub fn conv_transpose2d(mut self, out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        self.specs.push(LayerKindSpec::ConvTranspose2d {
            out,
            kernel,
            stride,
            padding,
        });
        self
    }

    pub fn batch_norm(mut self) -> Self {
        self.specs.push(LayerKindSpec::BatchNorm);
        self
    }

    pub fn max_pool(mut self, size: usize, stride: usize) -> Self {
        self.specs.push(LayerKindSpec::MaxPool { size, stride });
        self
    }

    pub fn unpool(mut self, size: usize) -> Self {
        self.specs.push(LayerKindSpec::Unpool(size));
        self
    }

    pub fn activation(mut self, act: Activation) -> Self {
        if act != Activation::Identity {
            self.specs.push(LayerKindSpec::Activation(act));
        }
        self
    }

    pub fn flatten(mut self) -> Self {
        self.specs.push(LayerKindSpec::Flatten);
        self
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        self.specs.push(LayerKindSpec::Reshape(shape.to_vec()));
        self
    }

    pub fn build<T: Real, R: Rng + ?Sized>(self, rng: &mut R) -> Result<Network<T>> {
        let err = |i: usize, msg: String| Error::Config(format!("{} layer {i}: {msg}", self.name));
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "{}: invalid input shape {:?}",
                self.name, self.input_shape
            )));
        }
        let mut shape = self.input_shape.clone();
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(self.specs.len());
        for (i, spec) in self.specs.iter().enumerate() {
            let (kind, out_shape, ids) = match spec {
                LayerKindSpec::Dense(out) => {
                    let [fan_in] = shape[..] else {
                        return Err(err(i, format!("dense layer needs a flat input, got {shape:?}")));
                    };
                    if *out == 0 {
                        return Err(err(i, "dense layer with zero outputs".into()));
                    }
                    let w = params.push(
                        format!("{i}.weight"),
                        init::glorot_uniform(vec![*out, fan_in], fan_in, *out, rng),
                        true,
                    );
                    let b = params.push(format!("{i}.bias"), Tensor::zeros(vec![*out]), true);
                    (
                        LayerKind::Dense {
                            inputs: fan_in,
                            outputs: *out,
                        },
                        vec![*out],
                        vec![w, b],
                    )
                }
                LayerKindSpec::Conv2d {
                    out,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(i, format!("conv2d needs C x H x W input, got {shape:?}")));
                    };
                    if *stride == 0 || h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                        return Err(err(
                            i,
                            format!("kernel {kernel} stride {stride} padding {padding} does not fit {shape:?}"),
                        ));
                    }
                    let oh = (h + 2 * padding - kernel) / stride + 1;
                    let ow = (w + 2 * padding - kernel) / stride + 1;
                    let area = kernel * kernel;
                    let k = params.push(
                        format!("{i}.weight"),
                        init::glorot_uniform(vec![*out, c, *kernel, *kernel], c * area, out * area, rng),
                        true,
                    );
                    let b = params.push(format!("{i}.bias"), Tensor::zeros(vec![*out]), true);
                    (
                        LayerKind::Conv2d {
                            in_channels: c,
                            out_channels: *out,
                            kernel: *kernel,
                            stride: *stride,
                            padding: *padding,
                        },
                        vec![*out, oh, ow],
                        vec![k, b],
                    )
                }
                LayerKindSpec::ConvTranspose2d {
                    out,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(i, format!("conv_transpose2d needs C x H x W input, got {shape:?}")));
                    };
                    let oh = ((h - 1) * stride + kernel).checked_sub(2 * padding);
                    let ow = ((w - 1) * stride + kernel).checked_sub(2 * padding);
                    let (Some(oh), Some(ow)) = (oh, ow) else {
                        return Err(err(i, format!("padding {padding} too large for {shape:?}")));
                    };
                    if *stride == 0 || oh == 0 || ow == 0 {
                        return Err(err(i, format!("degenerate transposed convolution on {shape:?}")));
                    }
                    let area = kernel * kernel;
                    let k = params.push(
                        format!("{i}.weight"),
                        init::glorot_uniform(vec![c, *out, *kernel, *kernel], c * area, out * area, rng),
                        true,
                    );
                    let b = params.push(format!("{i}.bias"), Tensor::zeros(vec![*out]), true);
                    (
                        LayerKind::ConvTranspose2d {
                            in_channels: c,
                            out_channels: *out,
                            kernel: *kernel,
                            stride: *stride,
                            padding: *padding,
                        },
                        vec![*out, oh, ow],
                        vec![k, b],
                    )
                }
                LayerKindSpec::BatchNorm => {
                    let c = shape[0];
                    let ids = vec![
                        params.push(format!("{i}.gamma"), Tensor::ones(vec![c]), true),
                        params.push(format!("{i}.beta"), Tensor::zeros(vec![c]), true),
                        params.push(format!("{i}.running_mean"), Tensor::zeros(vec![c]), false),
                        params.push(format!("{i}.running_var"), Tensor::ones(vec![c]), false),
                    ];
                    (LayerKind::BatchNorm { channels: c }, shape.clone(), ids)
                }
                LayerKindSpec::MaxPool { size, stride } => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(i, format!("max_pool needs C x H x W input, got {shape:?}")));
                    };
                    if *size == 0 || *stride == 0 || h < *size || w < *size {
                        return Err(err(i, format!("pool {size}/{stride} does not fit {shape:?}")));
                    }
                    (
                        LayerKind::MaxPool {
                            size: *size,
                            stride: *stride,
                        },
                        vec![c, (h - size) / stride + 1, (w - size) / stride + 1],
                        vec![],
                    )
                }
                LayerKindSpec::Unpool(s) => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(i, format!("unpool needs C x H x W input, got {shape:?}")));
                    };
                    if *s == 0 {
                        return Err(err(i, "unpool block size 0".into()));
                    }
                    (LayerKind::Unpool { size: *s }, vec![c, h * s, w * s], vec![])
                }
                LayerKindSpec::Activation(a) => (LayerKind::Activation(*a), shape.clone(), vec![]),
                LayerKindSpec::Flatten => (LayerKind::Flatten, vec![numel(&shape)], vec![]),
                LayerKindSpec::Reshape(to) => {
                    if numel(to) != numel(&shape) {
                        return Err(err(i, format!("cannot reshape {shape:?} to {to:?}")));
                    }
                    (LayerKind::Reshape(to.clone()), to.clone(), vec![])
                }
            };
            shape = out_shape.clone();
            layers.push(Layer {
                kind,
                output_shape: out_shape,
                params: ids,
            });
        }
        Ok(Network {
            name: self.name,
            input_shape: self.input_shape,
            layers,
            params,
        })
    }
}

impl<T: Real> Network<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.output_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        self.layers
            .iter()
            .map(|l| LayerInfo {
                kind: l.kind.clone(),
                output_shape: l.output_shape.clone(),
            })
            .collect()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Index of the weight tensor of layer `layer`, if it has one.
    pub fn weight_index(&self, layer: usize) -> Option<usize> {
        let l = self.layers.get(layer)?;
        l.kind.is_weighted().then(|| l.params[0])
    }

    /// Registers all trainable parameters on `tape`. With `trainable = false`
    /// they enter as constants, which freezes the network for this pass.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if !p.trainable {
                    None
                } else if trainable {
                    Some(tape.leaf(p.value.clone()))
                } else {
                    Some(tape.constant(p.value.clone()))
                }
            })
            .collect();
        Bound { vars }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "{}: expected N x {:?} input, got {shape:?}",
                self.name, self.input_shape
            )));
        }
        Ok(())
    }

    /// Forward pass. In [`Mode::Train`] batch norm uses batch statistics and
    /// folds them into its running averages.
    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let mut h = x;
        let mut deferred = None;
        for (li, layer) in self.layers.iter().enumerate() {
            if let LayerKind::Activation(a) = layer.kind {
                let next = self.layers.get(li + 1).map(|l| &l.kind);
                if a.commutes_with_max() && matches!(next, Some(LayerKind::MaxPool { .. })) {
                    deferred = Some(a);
                    continue;
                }
            }
            let p = |i: usize| {
                bound.var(layer.params[i]).ok_or_else(|| {
                    Error::Contract("network parameters were not bound on this tape".into())
                })
            };
            h = match &layer.kind {
                LayerKind::Dense { .. } => tape.linear(h, p(0)?, Some(p(1)?))?,
                LayerKind::Conv2d { stride, padding, .. } => {
                    tape.conv2d_bias(h, p(0)?, p(1)?, *stride, *padding)?
                }
                LayerKind::ConvTranspose2d { stride, padding, .. } => {
                    tape.conv_transpose2d_bias(h, p(0)?, p(1)?, *stride, *padding)?
                }
                LayerKind::BatchNorm { .. } => {
                    let (mean_i, var_i) = (layer.params[2], layer.params[3]);
                    let eps = T::of(BN_EPS);
                    match mode {
                        Mode::Eval => {
                            let mean = self.params.get(mean_i).value.data().to_vec();
                            let var = self.params.get(var_i).value.data().to_vec();
                            tape.batch_norm(h, p(0)?, p(1)?, Some((&mean, &var)), eps)?.0
                        }
                        Mode::Train | Mode::BatchStats => {
                            let count = tape.value(h).numel() / layer.output_shape[0];
                            let (y, stats) = tape.batch_norm(h, p(0)?, p(1)?, None, eps)?;
                            if let (Some((mean, var)), Mode::Train) = (stats, mode) {
                                let m = T::of(BN_MOMENTUM);
                                let unbias = T::of(count as f64 / (count as f64 - 1.0));
                                let rm = self.params.get_mut(mean_i).value.data_mut();
                                for (r, b) in rm.iter_mut().zip(&mean) {
                                    *r = m * *r + (T::one() - m) * *b;
                                }
                                let rv = self.params.get_mut(var_i).value.data_mut();
                                for (r, b) in rv.iter_mut().zip(&var) {
                                    *r = m * *r + (T::one() - m) * *b * unbias;
                                }
                            }
                            y
                        }
                    }
                }
                LayerKind::MaxPool { size, stride } => {
                    let y = tape.max_pool2d(h, *size, *stride)?;
                    match deferred.take() {
                        Some(a) => a.apply(tape, y)?,
                        None => y,
                    }
                }
                LayerKind::Unpool { size } => tape.unpool2d(h, *size)?,
                LayerKind::Activation(a) => a.apply(tape, h)?,
                LayerKind::Flatten | LayerKind::Reshape(_) => {
                    let n = tape.shape(h)[0];
                    let mut shape = vec![n];
                    shape.extend_from_slice(&layer.output_shape);
                    tape.reshape(h, shape)?
                }
            };
        }
        Ok(h)
    }

    /// Gradients aligned with the parameter store: `None` for buffers, zeros
    /// for trainable tensors the loss did not reach. Moves them out of `grads`.
    pub fn gradients(&self, bound: &Bound, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if !p.trainable {
                    return None;
                }
                Some(
                    bound
                        .var(i)
                        .and_then(|v| grads.take(v))
                        .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec())),
                )
            })
            .collect()
    }

    /// Inference in eval mode, `chunk` samples at a time.
    pub fn predict(&mut self, x: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let n = x.batch_len();
        if n == 0 {
            let mut shape = vec![0];
            shape.extend_from_slice(self.output_shape());
            return Ok(Tensor::zeros(shape));
        }
        let chunk = chunk.max(1);
        let mut parts = Vec::with_capacity(n.div_ceil(chunk));
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let xi = tape.constant(x.slice_batch(start, end));
            let y = self.forward(&mut tape, &bound, xi, Mode::Eval)?;
            if let Some(op) = tape.non_finite() {
                return Err(Error::NonFinite(op.to_string()));
            }
            parts.push(tape.value(y).clone());
            start = end;
        }
        Tensor::concat_batch(&parts)
    }

    /// Copies parameter values (and buffers) from a checkpoint-style list.
    pub fn load_values(&mut self, values: &[(String, Tensor<T>)], prefix: &str) -> Result<()> {
        for p in self.params.iter_mut() {
            let key = format!("{prefix}{}", p.name);
            let (_, v) = values
                .iter()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| Error::Consistency(format!("checkpoint lacks tensor `{key}`")))?;
            if v.shape() != p.value.shape() {
                return Err(Error::Consistency(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builder_tracks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net: Network<f32> = NetworkBuilder::new("cnn", &[1, 28, 28])
            .conv2d(64, 5, 1, 2)
            .activation(Activation::leaky())
            .max_pool(2, 2)
            .conv2d(32, 5, 1, 2)
            .max_pool(2, 2)
            .flatten()
            .dense(10)
            .build(&mut rng)
            .unwrap();
        assert_eq!(net.output_shape(), &[10]);
        let shapes: Vec<_> = net.layers().into_iter().map(|l| l.output_shape).collect();
        assert_eq!(shapes[2], vec![64, 14, 14]);
        assert_eq!(shapes[5], vec![1568]);
    }

    #[test]
    fn dense_on_image_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = NetworkBuilder::new("bad", &[1, 4, 4]).dense(3).build::<f32, _>(&mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn batch_norm_eval_is_affine_and_batch_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net: Network<f64> = NetworkBuilder::new("bn", &[3]).batch_norm().build(&mut rng).unwrap();
        // move the running statistics away from their initial values
        for _ in 0..5 {
            let mut tape = Tape::new();
            let b = net.bind(&mut tape, true);
            let x = tape.constant(Tensor::from_fn(vec![4, 3], |i| (i as f64).sin() * 3.0 + 1.0));
            net.forward(&mut tape, &b, x, Mode::Train).unwrap();
        }
        let x = Tensor::<f64>::from_fn(vec![4, 3], |i| i as f64 * 0.1);
        let full = net.predict(&x, 16).unwrap();
        let single = net.predict(&x.slice_batch(1, 2), 16).unwrap();
        assert_eq!(full.sample(1), single.sample(0));
        // affine: f(a) + f(b) - f(0) == f(a + b)
        let a = Tensor::<f64>::from_f64(vec![1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::<f64>::from_f64(vec![1, 3], &[-0.5, 0.25, 4.0]).unwrap();
        let ab = Tensor::<f64>::from_f64(vec![1, 3], &[0.5, 2.25, 7.0]).unwrap();
        let z = Tensor::<f64>::zeros(vec![1, 3]);
        let (fa, fb, fab, f0) = (
            net.predict(&a, 1).unwrap(),
            net.predict(&b, 1).unwrap(),
            net.predict(&ab, 1).unwrap(),
            net.predict(&z, 1).unwrap(),
        );
        for j in 0..3 {
            let lhs = fa.data()[j] + fb.data()[j] - f0.data()[j];
            assert!((lhs - fab.data()[j]).abs() < 1e-12);
        }
    }
}
