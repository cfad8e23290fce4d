//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever the gradient
//! rule needs. Nodes only ever refer to earlier nodes, so a single reverse
//! sweep from the loss visits each node after all of its consumers.

pub mod kernels;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Layout, Real, Tensor};

pub use kernels::{max_pool2d, unpool2d, ArgmaxMask, Window};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    Reshape(Var),
    Concat(Vec<(Var, usize)>),
    Narrow { x: Var, start: usize },
    ChannelBias { x: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Option<Var>, window: Window },
    ConvTranspose2d { x: Var, k: Var, b: Option<Var>, window: Window },
    MaxPool { x: Var, indices: Vec<u32> },
    Unpool { x: Var, s: usize },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    Bce { target: Var, pred: Var },
    Mse { target: Var, pred: Var },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    GaussianKl { mu: Var, logvar: Var },
    SparsityKl { act: Var, rho: T, beta: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of one forward pass. Owned by a single training context.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    non_finite: Option<String>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a loss node.
    pub fn scalar(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    /// Name of the first op that produced a NaN or infinity, if any.
    pub fn non_finite(&self) -> Option<&str> {
        self.non_finite.as_deref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name.to_string());
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient and
    /// is reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if let Some(op) = &self.non_finite {
            return Err(Error::NonFinite(op.clone()));
        }
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g));
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let gd = g.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(m, n, k, gd, Layout::Plain, val(*b), Layout::Transposed, &mut da, false);
                    self.accumulate(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(k, m, n, val(*a), Layout::Transposed, gd, Layout::Plain, &mut db, false);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fan_in) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fan_out = self.shape(*w)[0];
                if wants(*x) {
                    let mut dx = vec![T::zero(); n * fan_in];
                    gemm(n, fan_out, fan_in, gd, Layout::Plain, val(*w), Layout::Plain, &mut dx, false);
                    self.accumulate(grads, *x, dx);
                }
                if wants(*w) {
                    let mut dw = vec![T::zero(); fan_out * fan_in];
                    gemm(fan_out, n, fan_in, gd, Layout::Transposed, val(*x), Layout::Plain, &mut dw, false);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let mut db = vec![T::zero(); fan_out];
                        for row in gd.chunks(fan_out) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                        self.accumulate(grads, *b, db);
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                if wants(*b) {
                    self.accumulate(grads, *b, gd.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let d = gd.iter().zip(val(*b)).map(|(&g, &y)| g * y).collect();
                    self.accumulate(grads, *a, d);
                }
                if wants(*b) {
                    let d = gd.iter().zip(val(*a)).map(|(&g, &y)| g * y).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, c) => {
                let d = gd.iter().map(|&v| v * *c).collect();
                self.accumulate(grads, *a, d);
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.accumulate(grads, *a, gd.to_vec());
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(out).map(|(&g, &y)| g * y).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let d = gd.iter().zip(val(*a)).map(|(&g, &x)| g / x).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let two = T::of(2.0);
                let d = gd.iter().zip(val(*a)).map(|(&g, &x)| g * two * x).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = gd
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(val(*a))
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = gd
                    .iter()
                    .zip(val(*a))
                    .map(|(&g, &x)| if x > T::zero() { g } else { g * *slope })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                self.accumulate(grads, *a, vec![gd[0] / T::of(n as f64); n]);
            }
            Op::SumRows(a) => {
                let rows = self.shape(*a)[0];
                let mut d = Vec::with_capacity(rows * gd.len());
                for _ in 0..rows {
                    d.extend_from_slice(gd);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumCols(a) => {
                let cols = self.shape(*a)[1];
                let d = gd.iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Concat(parts) => {
                let n = node.value.shape()[0];
                let total = node.value.sample_len();
                let mut offset = 0;
                for &(v, len) in parts {
                    if wants(v) {
                        let mut d = Vec::with_capacity(n * len);
                        for s in 0..n {
                            d.extend_from_slice(&gd[s * total + offset..s * total + offset + len]);
                        }
                        self.accumulate(grads, v, d);
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, start } => {
                let xs = self.nodes[x.0].value.shape();
                let n = xs[0];
                let inner: usize = xs[2..].iter().product();
                let total = self.nodes[x.0].value.sample_len();
                let len = node.value.sample_len();
                let mut d = vec![T::zero(); n * total];
                for s in 0..n {
                    d[s * total + start * inner..s * total + start * inner + len]
                        .copy_from_slice(&gd[s * len..(s + 1) * len]);
                }
                self.accumulate(grads, *x, d);
            }
            Op::ChannelBias { x, b } => {
                self.accumulate(grads, *x, gd.to_vec());
                if wants(*b) {
                    self.accumulate(grads, *b, channel_sums(node.value.shape(), gd));
                }
            }
            Op::Conv2d { x, k, b, window } => {
                if let Some(b) = b.filter(|b| wants(*b)) {
                    self.accumulate(grads, b, channel_sums(node.value.shape(), gd));
                }
                let batch = self.shape(*x)[0];
                let filters = self.shape(*k)[0];
                let (dx, dk) =
                    kernels::conv2d_backward(val(*x), batch, val(*k), filters, window, gd, wants(*x), wants(*k));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, *k, dk);
                }
            }
            Op::ConvTranspose2d { x, k, b, window } => {
                if let Some(b) = b.filter(|b| wants(*b)) {
                    self.accumulate(grads, b, channel_sums(node.value.shape(), gd));
                }
                let batch = self.shape(*x)[0];
                let in_ch = self.shape(*x)[1];
                let (dx, dk) = kernels::conv_transpose2d_backward(
                    val(*x),
                    batch,
                    val(*k),
                    in_ch,
                    window,
                    gd,
                    wants(*x),
                    wants(*k),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, *k, dk);
                }
            }
            Op::MaxPool { x, indices } => {
                let mut d = vec![T::zero(); self.nodes[x.0].value.numel()];
                for (&idx, &v) in indices.iter().zip(gd) {
                    let idx = idx as usize;
                    d[idx] = d[idx] + v;
                }
                self.accumulate(grads, *x, d);
            }
            Op::Unpool { x, s } => {
                let xs = self.shape(*x);
                let d = kernels::unpool2d_backward(gd, xs[0], xs[1], xs[2], xs[3], *s);
                self.accumulate(grads, *x, d);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let shape = node.value.shape();
                let (n, c) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let count = T::of((n * inner) as f64);
                let gam = val(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * inner;
                        for j in base..base + inner {
                            dgamma[ch] = dgamma[ch] + gd[j] * xhat[j];
                            dbeta[ch] = dbeta[ch] + gd[j];
                        }
                    }
                }
                if wants(*x) {
                    let mut dx = vec![T::zero(); gd.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * inner;
                            for j in base..base + inner {
                                let dxhat = gd[j] * gam[ch];
                                dx[j] = if *training {
                                    inv_std[ch] / count
                                        * (count * dxhat
                                            - gam[ch] * dbeta[ch]
                                            - xhat[j] * gam[ch] * dgamma[ch])
                                } else {
                                    dxhat * inv_std[ch]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if wants(*gamma) {
                    self.accumulate(grads, *gamma, dgamma);
                }
                if wants(*beta) {
                    self.accumulate(grads, *beta, dbeta);
                }
            }
            Op::Bce { target, pred } => {
                let batch = T::of(self.nodes[pred.0].value.batch_len() as f64);
                let scale = gd[0] / batch;
                let eps = T::of(ops::BCE_EPS);
                let (t, p) = (val(*target), val(*pred));
                // Straight after a sigmoid, differentiate w.r.t. its input:
                // sigma - t. Same as the chain rule wherever the clamp is
                // inactive, but a saturated sigmoid still gets a gradient.
                let through_sigmoid = match self.nodes[pred.0].op {
                    Op::Sigmoid(z) if wants(z) => Some(z),
                    _ => None,
                };
                if let Some(z) = through_sigmoid {
                    let d = t.iter().zip(p).map(|(&t, &p)| scale * (p - t)).collect();
                    self.accumulate(grads, z, d);
                } else if wants(*pred) {
                    let d = t
                        .iter()
                        .zip(p)
                        .map(|(&t, &p)| {
                            if p > eps && p < T::one() - eps {
                                scale * (-t / p + (T::one() - t) / (T::one() - p))
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    self.accumulate(grads, *pred, d);
                }
                if wants(*target) {
                    let d = p
                        .iter()
                        .map(|&p| {
                            let pc = p.max(eps).min(T::one() - eps);
                            scale * ((T::one() - pc).ln() - pc.ln())
                        })
                        .collect();
                    self.accumulate(grads, *target, d);
                }
            }
            Op::Mse { target, pred } => {
                let batch = T::of(self.nodes[pred.0].value.batch_len() as f64);
                let scale = gd[0] / batch;
                let (t, p) = (val(*target), val(*pred));
                if wants(*pred) {
                    let d = t.iter().zip(p).map(|(&t, &p)| scale * (p - t)).collect();
                    self.accumulate(grads, *pred, d);
                }
                if wants(*target) {
                    let d = t.iter().zip(p).map(|(&t, &p)| scale * (t - p)).collect();
                    self.accumulate(grads, *target, d);
                }
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let scale = gd[0] / T::of(labels.len() as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * k + y] = d[r * k + y] - scale;
                }
                self.accumulate(grads, *logits, d);
            }
            Op::GaussianKl { mu, logvar } => {
                let batch = T::of(self.nodes[mu.0].value.batch_len() as f64);
                let scale = gd[0] / batch;
                if wants(*mu) {
                    let d = val(*mu).iter().map(|&m| scale * m).collect();
                    self.accumulate(grads, *mu, d);
                }
                if wants(*logvar) {
                    let half = T::of(0.5);
                    let d = val(*logvar)
                        .iter()
                        .map(|&lv| scale * half * (lv.exp() - T::one()))
                        .collect();
                    self.accumulate(grads, *logvar, d);
                }
            }
            Op::SparsityKl { act, rho, beta } => {
                let shape = self.shape(*act);
                let (n, h) = (shape[0], shape[1]);
                let a = val(*act);
                let eps = T::of(ops::BCE_EPS);
                let mut per_unit = vec![T::zero(); h];
                for j in 0..h {
                    let mut mean = T::zero();
                    for s in 0..n {
                        mean = mean + a[s * h + j];
                    }
                    mean = mean / T::of(n as f64);
                    per_unit[j] = if mean > eps && mean < T::one() - eps {
                        gd[0] * *beta * (-*rho / mean + (T::one() - *rho) / (T::one() - mean))
                            / T::of(n as f64)
                    } else {
                        T::zero()
                    };
                }
                let d = (0..n * h).map(|i| per_unit[i % h]).collect();
                self.accumulate(grads, *act, d);
            }
        }
        Ok(())
    }
}


/// Per-channel sums of an NC... gradient, the adjoint of a broadcast bias.
fn channel_sums<T: Real>(shape: &[usize], gd: &[T]) -> Vec<T> {
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    let mut db = vec![T::zero(); c];
    if inner > 0 {
        for (i, block) in gd.chunks(inner).enumerate() {
            db[i % c] = db[i % c] + block.iter().copied().sum::<T>();
        }
    }
    db
}
