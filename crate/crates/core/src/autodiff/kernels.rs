//! Forward and backward kernels for the spatial ops. Pure functions over flat
//! slices; the tape wires them together.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Layout, Real, Tensor};

/// Geometry of a cross-correlation between a `channels x height x width`
/// image and a `kh x kw` window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kw) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Shape("stride must be at least 1".into()));
        }
        if self.height + 2 * self.padding < self.kh || self.width + 2 * self.padding < self.kw {
            return Err(Error::Shape(format!(
                "kernel {}x{} larger than padded input {}x{} (padding {})",
                self.kh, self.kw, self.height, self.width, self.padding
            )));
        }
        Ok(())
    }
}

/// Target size (in elements) of the unfolded column buffer; samples are
/// processed in chunks so that each GEMM is wide enough to run near peak.
const COL_BUDGET: usize = 1 << 16;

fn chunk_len(w: &Window, batch: usize) -> usize {
    (COL_BUDGET / (w.patch_len() * w.positions()).max(1)).clamp(1, batch.max(1))
}

/// Unfolds one image into rows of a `patch_len x ld` matrix, starting at
/// column `offset`.
pub fn im2col<T: Real>(src: &[T], w: &Window, cols: &mut [T], ld: usize, offset: usize) {
    let (oh, ow) = (w.out_height(), w.out_width());
    let pad = w.padding as isize;
    for c in 0..w.channels {
        let plane = &src[c * w.height * w.width..(c + 1) * w.height * w.width];
        for ky in 0..w.kh {
            for kx in 0..w.kw {
                let row = (c * w.kh + ky) * w.kw + kx;
                let dst = &mut cols[row * ld + offset..row * ld + offset + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * w.stride + ky) as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= w.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w.width..(iy as usize + 1) * w.width];
                    if w.stride == 1 {
                        // contiguous run of valid columns, zero margins
                        let lo = (pad - kx as isize).clamp(0, ow as isize) as usize;
                        let hi = ((w.width as isize + pad - kx as isize).clamp(0, ow as isize)) as usize;
                        line[..lo].iter_mut().for_each(|v| *v = T::zero());
                        if hi > lo {
                            let start = (lo as isize + kx as isize - pad) as usize;
                            line[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                        }
                        line[hi.max(lo)..].iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * w.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= w.width as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an image.
pub fn col2im<T: Real>(cols: &[T], w: &Window, dst: &mut [T], ld: usize, offset: usize) {
    let (oh, ow) = (w.out_height(), w.out_width());
    let pad = w.padding as isize;
    for c in 0..w.channels {
        let plane = &mut dst[c * w.height * w.width..(c + 1) * w.height * w.width];
        for ky in 0..w.kh {
            for kx in 0..w.kw {
                let row = (c * w.kh + ky) * w.kw + kx;
                let src = &cols[row * ld + offset..row * ld + offset + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * w.stride + ky) as isize - pad;
                    if iy < 0 || iy >= w.height as isize {
                        continue;
                    }
                    let base = iy as usize * w.width;
                    if w.stride == 1 {
                        let lo = (pad - kx as isize).clamp(0, ow as isize) as usize;
                        let hi = ((w.width as isize + pad - kx as isize).clamp(0, ow as isize)) as usize;
                        if hi > lo {
                            let start = base + (lo as isize + kx as isize - pad) as usize;
                            let dst = &mut plane[start..start + hi - lo];
                            for (d, &v) in dst.iter_mut().zip(&src[oy * ow + lo..oy * ow + hi]) {
                                *d = *d + v;
                            }
                        }
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * w.stride + kx) as isize - pad;
                        if ix >= 0 && ix < w.width as isize {
                            plane[base + ix as usize] = plane[base + ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `[S, C, P]` block -> `C x (S * P)` matrix.
fn gather_channels<T: Real>(src: &[T], samples: usize, channels: usize, positions: usize, dst: &mut [T]) {
    let ld = samples * positions;
    for s in 0..samples {
        for c in 0..channels {
            let from = &src[(s * channels + c) * positions..(s * channels + c + 1) * positions];
            dst[c * ld + s * positions..c * ld + (s + 1) * positions].copy_from_slice(from);
        }
    }
}

/// Inverse of [`gather_channels`].
fn scatter_channels<T: Real>(
    src: &[T],
    samples: usize,
    channels: usize,
    positions: usize,
    bias: Option<&[T]>,
    dst: &mut [T],
) {
    let ld = samples * positions;
    for s in 0..samples {
        for c in 0..channels {
            let out = &mut dst[(s * channels + c) * positions..(s * channels + c + 1) * positions];
            let from = &src[c * ld + s * positions..c * ld + (s + 1) * positions];
            match bias {
                Some(b) => out.iter_mut().zip(from).for_each(|(o, &v)| *o = v + b[c]),
                None => out.copy_from_slice(from),
            }
        }
    }
}

/// `out[n] = kernel (F x patch) * im2col(x[n]) (+ bias per filter)`.
pub fn conv2d_forward<T: Real>(
    x: &[T],
    batch: usize,
    kernel: &[T],
    filters: usize,
    w: &Window,
    bias: Option<&[T]>,
) -> Vec<T> {
    let in_len = w.channels * w.height * w.width;
    let positions = w.positions();
    let patch = w.patch_len();
    let chunk = chunk_len(w, batch);
    let mut out = vec![T::zero(); batch * filters * positions];
    let mut cols = vec![T::zero(); patch * chunk * positions];
    let mut tmp = vec![T::zero(); filters * chunk * positions];
    let mut n0 = 0;
    while n0 < batch {
        let s = chunk.min(batch - n0);
        let ld = s * positions;
        for i in 0..s {
            im2col(&x[(n0 + i) * in_len..(n0 + i + 1) * in_len], w, &mut cols, ld, i * positions);
        }
        gemm(filters, patch, ld, kernel, Layout::Plain, &cols[..patch * ld], Layout::Plain, &mut tmp[..filters * ld], false);
        scatter_channels(&tmp[..filters * ld], s, filters, positions, bias, &mut out[n0 * filters * positions..(n0 + s) * filters * positions]);
        n0 += s;
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input and kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &[T],
    batch: usize,
    kernel: &[T],
    filters: usize,
    w: &Window,
    grad_out: &[T],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let in_len = w.channels * w.height * w.width;
    let positions = w.positions();
    let patch = w.patch_len();
    let chunk = chunk_len(w, batch);
    // stride 1, square kernel: the input gradient is itself a convolution of
    // the output gradient with the flipped, channel-swapped kernel
    let direct = want_input && w.stride == 1 && w.kh == w.kw && w.padding < w.kh;
    let mut dx = if direct {
        Some(input_grad_direct(batch, kernel, filters, w, grad_out))
    } else {
        want_input.then(|| vec![T::zero(); batch * in_len])
    };
    if dx.is_some() && direct && !want_kernel {
        return (dx, None);
    }
    let mut dk = want_kernel.then(|| vec![T::zero(); filters * patch]);
    let mut cols = vec![T::zero(); patch * chunk * positions];
    let mut g = vec![T::zero(); filters * chunk * positions];
    let mut n0 = 0;
    while n0 < batch {
        let s = chunk.min(batch - n0);
        let ld = s * positions;
        let block = &grad_out[n0 * filters * positions..(n0 + s) * filters * positions];
        gather_channels(block, s, filters, positions, &mut g);
        let g = &g[..filters * ld];
        if let Some(dk) = dk.as_mut() {
            for i in 0..s {
                im2col(&x[(n0 + i) * in_len..(n0 + i + 1) * in_len], w, &mut cols, ld, i * positions);
            }
            gemm(filters, ld, patch, g, Layout::Plain, &cols[..patch * ld], Layout::Transposed, dk, true);
        }
        if let Some(dx) = dx.as_mut().filter(|_| !direct) {
            gemm(patch, filters, ld, kernel, Layout::Transposed, g, Layout::Plain, &mut cols[..patch * ld], false);
            for i in 0..s {
                col2im(&cols, w, &mut dx[(n0 + i) * in_len..(n0 + i + 1) * in_len], ld, i * positions);
            }
        }
        n0 += s;
    }
    (dx, dk)
}

fn input_grad_direct<T: Real>(batch: usize, kernel: &[T], filters: usize, w: &Window, grad_out: &[T]) -> Vec<T> {
    let (c, k) = (w.channels, w.kh);
    let taps = k * k;
    let mut flipped = vec![T::zero(); kernel.len()];
    for f in 0..filters {
        for ch in 0..c {
            let src = &kernel[(f * c + ch) * taps..(f * c + ch + 1) * taps];
            let dst = &mut flipped[(ch * filters + f) * taps..(ch * filters + f + 1) * taps];
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
    }
    let back = Window {
        channels: filters,
        height: w.out_height(),
        width: w.out_width(),
        kh: k,
        kw: k,
        stride: 1,
        padding: k - 1 - w.padding,
    };
    conv2d_forward(grad_out, batch, &flipped, c, &back, None)
}

/// Transposed convolution. `w` describes the *output* image seen as the input
/// of the matching forward convolution; `x` has `in_ch x positions` per
/// sample and the kernel is `in_ch x (w.channels * kh * kw)`.
pub fn conv_transpose2d_forward<T: Real>(x: &[T], batch: usize, kernel: &[T], in_ch: usize, w: &Window) -> Vec<T> {
    let positions = w.positions();
    let patch = w.patch_len();
    let out_len = w.channels * w.height * w.width;
    let chunk = chunk_len(w, batch);
    let mut out = vec![T::zero(); batch * out_len];
    let mut cols = vec![T::zero(); patch * chunk * positions];
    let mut xs = vec![T::zero(); in_ch * chunk * positions];
    let mut n0 = 0;
    while n0 < batch {
        let s = chunk.min(batch - n0);
        let ld = s * positions;
        gather_channels(&x[n0 * in_ch * positions..(n0 + s) * in_ch * positions], s, in_ch, positions, &mut xs);
        gemm(patch, in_ch, ld, kernel, Layout::Transposed, &xs[..in_ch * ld], Layout::Plain, &mut cols[..patch * ld], false);
        for i in 0..s {
            col2im(&cols, w, &mut out[(n0 + i) * out_len..(n0 + i + 1) * out_len], ld, i * positions);
        }
        n0 += s;
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Real>(
    x: &[T],
    batch: usize,
    kernel: &[T],
    in_ch: usize,
    w: &Window,
    grad_out: &[T],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let positions = w.positions();
    let patch = w.patch_len();
    let out_len = w.channels * w.height * w.width;
    let chunk = chunk_len(w, batch);
    let mut dx = want_input.then(|| vec![T::zero(); batch * in_ch * positions]);
    let mut dk = want_kernel.then(|| vec![T::zero(); in_ch * patch]);
    let mut cols = vec![T::zero(); patch * chunk * positions];
    let mut xs = vec![T::zero(); in_ch * chunk * positions];
    let mut n0 = 0;
    while n0 < batch {
        let s = chunk.min(batch - n0);
        let ld = s * positions;
        for i in 0..s {
            im2col(&grad_out[(n0 + i) * out_len..(n0 + i + 1) * out_len], w, &mut cols, ld, i * positions);
        }
        let cols = &cols[..patch * ld];
        if let Some(dk) = dk.as_mut() {
            gather_channels(&x[n0 * in_ch * positions..(n0 + s) * in_ch * positions], s, in_ch, positions, &mut xs);
            gemm(in_ch, ld, patch, &xs[..in_ch * ld], Layout::Plain, cols, Layout::Transposed, dk, true);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(in_ch, patch, ld, kernel, Layout::Plain, cols, Layout::Plain, &mut xs[..in_ch * ld], false);
            scatter_channels(&xs[..in_ch * ld], s, in_ch, positions, None, &mut dx[n0 * in_ch * positions..(n0 + s) * in_ch * positions]);
        }
        n0 += s;
    }
    (dx, dk)
}

/// Winner positions of a max-pooling pass, as flat indices into the input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxMask {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub size: usize,
    pub stride: usize,
    pub indices: Vec<u32>,
}

impl ArgmaxMask {
    /// Offset of the winner inside its window for output element `i`.
    pub fn window_offset(&self, i: usize) -> (usize, usize) {
        let w = self.input_shape[3];
        let ow = self.output_shape[3];
        let oh = self.output_shape[2];
        let flat = self.indices[i] as usize;
        let (iy, ix) = ((flat / w) % self.input_shape[2], flat % w);
        let (oy, ox) = ((i / ow) % oh, i % ow);
        (iy - oy * self.stride, ix - ox * self.stride)
    }

    /// Writes each pooled value back at its winner position, zeros elsewhere.
    pub fn scatter<T: Real>(&self, pooled: &Tensor<T>) -> Result<Tensor<T>> {
        if pooled.shape() != self.output_shape.as_slice() {
            return Err(Error::Shape(format!(
                "scatter: pooled {:?} vs mask {:?}",
                pooled.shape(),
                self.output_shape
            )));
        }
        let mut out = Tensor::zeros(self.input_shape.clone());
        for (i, &v) in pooled.data().iter().enumerate() {
            out.data_mut()[self.indices[i] as usize] = v;
        }
        Ok(out)
    }
}

fn check_4d(shape: &[usize], op: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Shape(format!("{op} expects N x C x H x W, got {shape:?}"))),
    }
}

/// Max pooling over `size x size` windows. Ties go to the first element in
/// row-major scan order.
pub fn max_pool2d<T: Real>(x: &Tensor<T>, size: usize, stride: usize) -> Result<(Tensor<T>, ArgmaxMask)> {
    let (n, c, h, w) = check_4d(x.shape(), "max_pool2d")?;
    if size == 0 || stride == 0 {
        return Err(Error::Shape("max_pool2d: size and stride must be at least 1".into()));
    }
    if h < size || w < size {
        return Err(Error::Shape(format!(
            "max_pool2d: window {size} larger than spatial dims {h}x{w}"
        )));
    }
    let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    if x.numel() > u32::MAX as usize {
        return Err(Error::Shape(format!("max_pool2d: input {:?} too large", x.shape())));
    }
    let mut indices = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    if size == 2 && stride == 2 {
        pool_2x2(data, n * c, h, w, &mut out, &mut indices);
    } else {
        pool_general(data, n * c, h, w, size, stride, &mut out, &mut indices);
    }
    let output_shape = vec![n, c, oh, ow];
    Ok((
        Tensor::from_parts(output_shape.clone(), out),
        ArgmaxMask {
            input_shape: x.shape().to_vec(),
            output_shape,
            size,
            stride,
            indices,
        },
    ))
}

/// Scan order (row-major, strict `>`) matches `pool_general`.
fn pool_2x2<T: Real>(data: &[T], planes: usize, h: usize, w: usize, out: &mut Vec<T>, indices: &mut Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    for plane in 0..planes {
        let base = plane * h * w;
        for oy in 0..oh {
            let r0 = base + 2 * oy * w;
            let (top, bottom) = (&data[r0..r0 + w], &data[r0 + w..r0 + 2 * w]);
            for ox in 0..ow {
                let x0 = 2 * ox;
                let cand = [top[x0], top[x0 + 1], bottom[x0], bottom[x0 + 1]];
                let offs = [r0 + x0, r0 + x0 + 1, r0 + w + x0, r0 + w + x0 + 1];
                let (mut bv, mut bi) = (cand[0], offs[0]);
                for j in 1..4 {
                    let better = cand[j] > bv;
                    bv = if better { cand[j] } else { bv };
                    bi = if better { offs[j] } else { bi };
                }
                out.push(bv);
                indices.push(bi as u32);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pool_general<T: Real>(
    data: &[T],
    planes: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    out: &mut Vec<T>,
    indices: &mut Vec<u32>,
) {
    let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
    for plane in 0..planes {
        let base = plane * h * w;
        let src = &data[base..base + h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let first = oy * stride * w + ox * stride;
                let (mut best, mut best_v) = (first, src[first]);
                for dy in 0..size {
                    let row = first + dy * w;
                    for (dx, &v) in src[row..row + size].iter().enumerate() {
                        // select, not branch: random data mispredicts badly
                        let better = v > best_v;
                        best_v = if better { v } else { best_v };
                        best = if better { row + dx } else { best };
                    }
                }
                out.push(best_v);
                indices.push((base + best) as u32);
            }
        }
    }
}

/// Each entry becomes an `s x s` block holding the value in its top-left
/// corner and zeros elsewhere.
pub fn unpool2d<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_4d(x.shape(), "unpool2d")?;
    if s == 0 {
        return Err(Error::Shape("unpool2d: block size must be at least 1".into()));
    }
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                out[plane * oh * ow + y * s * ow + xx * s] = x.data()[plane * h * w + y * w + xx];
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

/// Adjoint of [`unpool2d`]: picks the top-left entry of every block.
pub fn unpool2d_backward<T: Real>(grad: &[T], n: usize, c: usize, h: usize, w: usize, s: usize) -> Vec<T> {
    let (oh, ow) = (h * s, w * s);
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                out.push(grad[plane * oh * ow + y * s * ow + x * s]);
            }
        }
    }
    out
}
