use super::kernels::{self, Window};
use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, numel, Layout, Real, Tensor};

/// Clamp applied to probabilities before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Slack allowed when checking that sparsity activations lie in (0, 1).
const ACTIVATION_SLACK: f64 = 1e-6;

fn same_shape(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{op}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

/// `[N, C, rest..]` -> (N, C, prod(rest)).
fn split_channels(shape: &[usize], op: &str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!(
            "{op} needs at least 2 dimensions, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], numel(&shape[2..])))
}

impl<T: Real> Tape<T> {
    fn unary(&mut self, a: Var, name: &'static str, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let rg = self.requires_grad(a);
        self.push(value, op, rg, name)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        same_shape(self.shape(a), self.shape(b), name)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(self.shape(a).to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg, name))
    }

    /// Matrix product of `m x k` and `k x n` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), Layout::Plain, self.value(b).data(), Layout::Plain, &mut out, false);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg, "matmul"))
    }

    /// Affine map `x * w^T + b` with `x: N x in`, `w: out x in`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::Shape(format!("linear: input {sx:?} with weight {sw:?}")));
        }
        let (n, fan_in, fan_out) = (sx[0], sx[1], sw[0]);
        let mut out = vec![T::zero(); n * fan_out];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.shape() != [fan_out] {
                return Err(Error::Shape(format!(
                    "linear: bias {:?} for {fan_out} outputs",
                    bias.shape()
                )));
            }
            for row in out.chunks_mut(fan_out) {
                row.copy_from_slice(bias.data());
            }
        }
        gemm(
            n,
            fan_in,
            fan_out,
            self.value(x).data(),
            Layout::Plain,
            self.value(w).data(),
            Layout::Transposed,
            &mut out,
            b.is_some(),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        Ok(self.push(Tensor::from_parts(vec![n, fan_out], out), Op::Linear { x, w, b }, rg, "linear"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, "scale", Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, "add_scalar", Op::AddScalar(a), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, "exp", Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, "log", Op::Log(a), |x| x.ln())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, "square", Op::Square(a), |x| x * x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, "sigmoid", Op::Sigmoid(a), |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, "tanh", Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, "relu", Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        if !(slope > T::zero() && slope < T::one()) {
            return Err(Error::Contract(format!("leaky_relu slope {slope} outside (0, 1)")));
        }
        Ok(self.unary(a, "leaky_relu", Op::LeakyRelu(a, slope), |x| {
            if x > T::zero() {
                x
            } else {
                x * slope
            }
        }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / T::of(v.numel() as f64);
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg, "mean")
    }

    /// Sum over the leading axis: `[N, rest..] -> [rest..]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() {
            return Err(Error::Shape("sum_rows on a scalar".into()));
        }
        let inner = numel(&shape[1..]);
        let mut out = vec![T::zero(); inner];
        for row in self.value(a).data().chunks(inner.max(1)) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::from_parts(shape[1..].to_vec(), out), Op::SumRows(a), rg, "sum_rows"))
    }

    /// Row sums of a matrix: `[N, C] -> [N]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape(format!("sum_cols expects a matrix, got {shape:?}")));
        }
        let out = self
            .value(a)
            .data()
            .chunks(shape[1].max(1))
            .map(|r| r.iter().copied().sum())
            .collect();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::from_parts(vec![shape[0]], out), Op::SumCols(a), rg, "sum_cols"))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Reshape(a), rg, "reshape"))
    }

    /// Flattens every sample: `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let shape = vec![v.batch_len(), v.sample_len()];
        self.reshape(a, shape)
    }

    /// Concatenation along axis 1. All parts share the batch size and the
    /// trailing dimensions.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        let (n, _, inner) = split_channels(&base, "concat")?;
        let mut channels = 0;
        let mut spans = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[0] != n || s[2..] != base[2..] {
                return Err(Error::Shape(format!("concat: {base:?} with {s:?}")));
            }
            channels += s[1];
            spans.push((p, s[1] * inner));
        }
        let total = channels * inner;
        let mut out = Vec::with_capacity(n * total);
        for s in 0..n {
            for &(p, len) in &spans {
                out.extend_from_slice(&self.value(p).data()[s * len..(s + 1) * len]);
            }
        }
        let mut shape = base.clone();
        shape[1] = channels;
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(spans), rg, "concat"))
    }

    /// Channels `start..start + len` along axis 1.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (n, c, inner) = split_channels(&shape, "narrow")?;
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!(
                "narrow: channels {start}..{} of {shape:?}",
                start + len
            )));
        }
        let total = c * inner;
        let mut out = Vec::with_capacity(n * len * inner);
        for s in 0..n {
            out.extend_from_slice(&self.value(x).data()[s * total + start * inner..s * total + (start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[1] = len;
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Narrow { x, start }, rg, "narrow"))
    }

    /// Adds `b[c]` to every element of channel `c` of `x: [N, C, ..]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (_, c, inner) = split_channels(&shape, "channel_bias")?;
        if self.shape(b) != [c] {
            return Err(Error::Shape(format!(
                "channel_bias: bias {:?} for input {shape:?}",
                self.shape(b)
            )));
        }
        let mut data = self.value(x).data().to_vec();
        add_channel_bias(&mut data, self.value(b).data(), inner);
        let rg = self.any_grad(&[x, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::ChannelBias { x, b }, rg, "channel_bias"))
    }

    /// Cross-correlation of `x: N x C x H x W` with `k: F x C x kh x kw`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_impl(x, k, None, stride, padding)
    }

    /// [`Tape::conv2d`] plus a per-filter bias, fused into one node.
    pub fn conv2d_bias(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_impl(x, k, Some(b), stride, padding)
    }

    fn check_bias(&self, b: Option<Var>, c: usize, what: &str) -> Result<()> {
        match b {
            Some(b) if self.shape(b) != [c] => Err(Error::Shape(format!(
                "{what}: bias {:?} for {c} output channels",
                self.shape(b)
            ))),
            _ => Ok(()),
        }
    }

    fn conv2d_impl(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
            return Err(Error::Shape(format!("conv2d: input {sx:?} with kernel {sk:?}")));
        }
        let window = Window {
            channels: sx[1],
            height: sx[2],
            width: sx[3],
            kh: sk[2],
            kw: sk[3],
            stride,
            padding,
        };
        window.validate().map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("conv2d: input {sx:?} with kernel {sk:?}: {m}")),
            other => other,
        })?;
        self.check_bias(b, sk[0], "conv2d")?;
        let bias = b.map(|b| self.value(b).data());
        let out = kernels::conv2d_forward(self.value(x).data(), sx[0], self.value(k).data(), sk[0], &window, bias);
        let shape = vec![sx[0], sk[0], window.out_height(), window.out_width()];
        let rg = self.any_grad(&[x, k]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv2d { x, k, b, window }, rg, "conv2d"))
    }

    /// Fractionally-strided convolution, the adjoint of [`Tape::conv2d`] with
    /// respect to its input. `k` is `C_in x C_out x kh x kw`; the output is
    /// `(H - 1) * stride - 2 * padding + kh` high.
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv_transpose2d_impl(x, k, None, stride, padding)
    }

    /// [`Tape::conv_transpose2d`] plus a per-channel bias, fused into one node.
    pub fn conv_transpose2d_bias(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.conv_transpose2d_impl(x, k, Some(b), stride, padding)
    }

    fn conv_transpose2d_impl(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[0] || stride == 0 {
            return Err(Error::Shape(format!(
                "conv_transpose2d: input {sx:?} with kernel {sk:?}, stride {stride}"
            )));
        }
        let oh = ((sx[2] - 1) * stride + sk[2]).checked_sub(2 * padding);
        let ow = ((sx[3] - 1) * stride + sk[3]).checked_sub(2 * padding);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::Shape(format!(
                "conv_transpose2d: padding {padding} too large for {sx:?}"
            )));
        };
        let window = Window {
            channels: sk[1],
            height: oh,
            width: ow,
            kh: sk[2],
            kw: sk[3],
            stride,
            padding,
        };
        window.validate()?;
        self.check_bias(b, sk[1], "conv_transpose2d")?;
        let mut out = kernels::conv_transpose2d_forward(self.value(x).data(), sx[0], self.value(k).data(), sx[1], &window);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), oh * ow);
        }
        let shape = vec![sx[0], sk[1], oh, ow];
        let rg = self.any_grad(&[x, k]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::ConvTranspose2d { x, k, b, window },
            rg,
            "conv_transpose2d",
        ))
    }

    pub fn max_pool2d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        let (y, mask) = kernels::max_pool2d(self.value(x), size, stride)?;
        let rg = self.requires_grad(x);
        Ok(self.push(
            y,
            Op::MaxPool {
                x,
                indices: mask.indices,
            },
            rg,
            "max_pool2d",
        ))
    }

    pub fn unpool2d(&mut self, x: Var, s: usize) -> Result<Var> {
        let y = kernels::unpool2d(self.value(x), s)?;
        let rg = self.requires_grad(x);
        Ok(self.push(y, Op::Unpool { x, s }, rg, "unpool2d"))
    }

    /// Per-channel normalization of `x: [N, C, ..]`. With `running = None`
    /// the batch statistics are used and returned as `(mean, biased var)`;
    /// otherwise the given statistics are applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let shape = self.shape(x).to_vec();
        let (n, c, inner) = split_channels(&shape, "batch_norm")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!(
                "batch_norm: scale {:?} / shift {:?} for input {shape:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let data = self.value(x).data();
        let count = T::of((n * inner) as f64);
        let (mean, var, training) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                if n * inner < 2 {
                    return Err(Error::Shape(format!(
                        "batch_norm: training mode needs more than one value per channel, got {shape:?}"
                    )));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * inner;
                        mean[ch] = mean[ch] + data[base..base + inner].iter().copied().sum::<T>();
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / count);
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * inner;
                        for &v in &data[base..base + inner] {
                            let d = v - mean[ch];
                            var[ch] = var[ch] + d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / count);
                (mean, var, true)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                for j in base..base + inner {
                    xhat[j] = (data[j] - mean[ch]) * inv_std[ch];
                    out[j] = g[ch] * xhat[j] + b[ch];
                }
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let v = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            rg,
            "batch_norm",
        );
        Ok((v, training.then_some((mean, var))))
    }

    /// Binary cross-entropy summed over features and averaged over the batch.
    /// Predictions are clamped to `[1e-7, 1 - 1e-7]`; targets must lie in
    /// `[0, 1]`.
    pub fn bce_loss(&mut self, target: Var, pred: Var) -> Result<Var> {
        same_shape(self.shape(target), self.shape(pred), "bce_loss")?;
        let t = self.value(target).data();
        if let Some(bad) = t.iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Contract(format!("bce_loss target {bad} outside [0, 1]")));
        }
        let eps = T::of(BCE_EPS);
        let p = self.value(pred).data();
        let mut total = T::zero();
        for (&t, &p) in t.iter().zip(p) {
            let pc = p.max(eps).min(T::one() - eps);
            total = total - (t * pc.ln() + (T::one() - t) * (T::one() - pc).ln());
        }
        let batch = T::of(self.value(pred).batch_len() as f64);
        let rg = self.any_grad(&[target, pred]);
        Ok(self.push(Tensor::scalar(total / batch), Op::Bce { target, pred }, rg, "bce_loss"))
    }

    /// Half squared error summed over features and averaged over the batch.
    pub fn mse_loss(&mut self, target: Var, pred: Var) -> Result<Var> {
        same_shape(self.shape(target), self.shape(pred), "mse_loss")?;
        let total: T = self
            .value(target)
            .data()
            .iter()
            .zip(self.value(pred).data())
            .map(|(&t, &p)| (t - p) * (t - p))
            .sum();
        let batch = T::of(self.value(pred).batch_len() as f64);
        let rg = self.any_grad(&[target, pred]);
        Ok(self.push(
            Tensor::scalar(T::of(0.5) * total / batch),
            Op::Mse { target, pred },
            rg,
            "mse_loss",
        ))
    }

    /// Mean negative log-softmax of the labelled class.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: logits {shape:?} with {} labels",
                labels.len()
            )));
        }
        let k = shape[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Input(format!("label {bad} outside {k} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); z.len()];
        let mut total = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            let row = &z[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * k + j] = e;
                denom = denom + e;
            }
            probs[r * k..(r + 1) * k].iter_mut().for_each(|p| *p = *p / denom);
            total = total + denom.ln() + max - row[y];
        }
        let n = T::of(labels.len().max(1) as f64);
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
            "softmax_cross_entropy",
        ))
    }

    /// KL divergence of `N(mu, exp(logvar))` from the standard normal, summed
    /// over latent dimensions and averaged over the batch.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        same_shape(self.shape(mu), self.shape(logvar), "gaussian_kl")?;
        let total: T = self
            .value(mu)
            .data()
            .iter()
            .zip(self.value(logvar).data())
            .map(|(&m, &lv)| T::one() + lv - m * m - lv.exp())
            .sum();
        let batch = T::of(self.value(mu).batch_len() as f64);
        let rg = self.any_grad(&[mu, logvar]);
        Ok(self.push(
            Tensor::scalar(T::of(-0.5) * total / batch),
            Op::GaussianKl { mu, logvar },
            rg,
            "gaussian_kl",
        ))
    }

    /// `beta * sum_j KL(rho || rho_hat_j)` where `rho_hat_j` is the batch mean
    /// of unit `j` of `act: N x H`, clamped away from 0 and 1.
    pub fn sparsity_kl(&mut self, act: Var, rho: f64, beta: f64) -> Result<Var> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Contract(format!("sparsity target {rho} outside (0, 1)")));
        }
        let shape = self.shape(act).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::Shape(format!("sparsity_kl expects N x H activations, got {shape:?}")));
        }
        let a = self.value(act).data();
        let slack = T::of(ACTIVATION_SLACK);
        if let Some(bad) = a.iter().find(|&&v| v < -slack || v > T::one() + slack) {
            return Err(Error::Contract(format!(
                "sparsity penalty needs activations in (0, 1), found {bad}"
            )));
        }
        let (n, h) = (shape[0], shape[1]);
        let (rho_t, beta_t, eps) = (T::of(rho), T::of(beta), T::of(BCE_EPS));
        let mut total = T::zero();
        for j in 0..h {
            let mut mean = T::zero();
            for s in 0..n {
                mean = mean + a[s * h + j];
            }
            let mean = (mean / T::of(n as f64)).max(eps).min(T::one() - eps);
            total = total
                + rho_t * (rho_t / mean).ln()
                + (T::one() - rho_t) * ((T::one() - rho_t) / (T::one() - mean)).ln();
        }
        let rg = self.requires_grad(act);
        Ok(self.push(
            Tensor::scalar(beta_t * total),
            Op::SparsityKl {
                act,
                rho: rho_t,
                beta: beta_t,
            },
            rg,
            "sparsity_kl",
        ))
    }
}

/// Adds `bias[c]` to every `inner`-long block of channel `c` (NCHW order).
fn add_channel_bias<T: Real>(data: &mut [T], bias: &[T], inner: usize) {
    if inner == 0 || bias.is_empty() {
        return;
    }
    let c = bias.len();
    for (i, block) in data.chunks_mut(inner).enumerate() {
        let bc = bias[i % c];
        block.iter_mut().for_each(|v| *v = *v + bc);
    }
}
