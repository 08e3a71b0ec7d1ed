//! Layer kernels. Convolutions lower to matrix products through im2col.

use crate::error::{Error, Result};

use super::{Scalar, Tensor4};

/// Spatial geometry of a 2-D (transposed) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/columns on the far side of a transposed convolution output.
    pub output_pad: usize,
}

impl ConvGeom {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            kh: k,
            kw: k,
            stride,
            pad,
            output_pad: 0,
        }
    }

    /// Output size of a forward convolution along one axis.
    fn conv_out(&self, n: usize, k: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        (self.stride > 0 && padded >= k).then(|| (padded - k) / self.stride + 1)
    }

    /// Output size of a transposed convolution along one axis.
    fn tconv_out(&self, n: usize, k: usize) -> Option<usize> {
        let full = (n.checked_sub(1)?) * self.stride + k + self.output_pad;
        (self.stride > 0 && self.output_pad < self.stride.max(1))
            .then_some(())
            .and(full.checked_sub(2 * self.pad))
            .filter(|&v| v > 0)
    }
}

/// Output columns `lo..hi` whose stride-1 input column `oj + shift` lies in
/// `0..w`.
fn valid_span(ow: usize, w: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).clamp(0, ow as isize) as usize;
    let hi = (w as isize - shift).clamp(lo as isize, ow as isize) as usize;
    (lo, hi)
}

/// Unfolds one item `[c, h, w]` into columns `[c kh kw, oh ow]`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, cols: &mut [T]) {
    let p = oh * ow;
    let (s, pad) = (g.stride as isize, g.pad as isize);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * p;
                let dst = &mut cols[row..row + p];
                for oi in 0..oh {
                    let hi = oi as isize * s - pad + ki as isize;
                    let out = &mut dst[oi * ow..(oi + 1) * ow];
                    if hi < 0 || hi >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[hi as usize * w..(hi as usize + 1) * w];
                    if s == 1 {
                        let (lo, hi_) = valid_span(ow, w, kj as isize - pad);
                        out[..lo].fill(T::zero());
                        out[hi_..].fill(T::zero());
                        let off = (lo as isize + kj as isize - pad) as usize;
                        out[lo..hi_].copy_from_slice(&src[off..off + hi_ - lo]);
                        continue;
                    }
                    for (oj, o) in out.iter_mut().enumerate() {
                        let wj = oj as isize * s - pad + kj as isize;
                        *o = if wj < 0 || wj >= w as isize { T::zero() } else { src[wj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `[c, h, w]`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, x: &mut [T]) {
    let p = oh * ow;
    let (s, pad) = (g.stride as isize, g.pad as isize);
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * p;
                let src = &cols[row..row + p];
                for oi in 0..oh {
                    let hi = oi as isize * s - pad + ki as isize;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[hi as usize * w..(hi as usize + 1) * w];
                    if s == 1 {
                        let (lo, hi_) = valid_span(ow, w, kj as isize - pad);
                        let off = (lo as isize + kj as isize - pad) as usize;
                        for (d, &v) in dst[off..off + hi_ - lo].iter_mut().zip(&src[oi * ow + lo..oi * ow + hi_]) {
                            *d = *d + v;
                        }
                        continue;
                    }
                    for (oj, &v) in src[oi * ow..(oi + 1) * ow].iter().enumerate() {
                        let wj = oj as isize * s - pad + kj as isize;
                        if wj >= 0 && wj < w as isize {
                            dst[wj as usize] = dst[wj as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Swaps the two channel axes and rotates each kernel by 180 degrees. Its own
/// inverse.
fn flip_kernel<T: Scalar>(w: &Tensor4<T>) -> Tensor4<T> {
    let [a, b, kh, kw] = w.shape;
    let mut out = Tensor4::zeros([b, a, kh, kw]);
    for i in 0..a {
        for o in 0..b {
            for u in 0..kh {
                for v in 0..kw {
                    out.data[((o * a + i) * kh + kh - 1 - u) * kw + kw - 1 - v] = w.data[((i * b + o) * kh + u) * kw + v];
                }
            }
        }
    }
    out
}

/// At stride 1 a convolution equals a transposed convolution with the kernel
/// flipped and padding `k - 1 - pad`. The transposed form unfolds the output
/// channels instead of the input channels, so it is cheaper when `oc < ic`.
fn via_transpose(g: &ConvGeom, ic: usize, oc: usize) -> Option<ConvGeom> {
    let ok = g.stride == 1 && g.output_pad == 0 && g.kh == g.kw && g.pad < g.kh && oc < ic;
    ok.then(|| ConvGeom::new(g.kh, 1, g.kh - 1 - g.pad))
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in y.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<T: Scalar>(dy: &Tensor4<T>, db: &mut [T]) {
    let plane = dy.plane();
    for b in 0..dy.batch() {
        for (c, chunk) in dy.item(b).chunks(plane).enumerate() {
            db[c] = db[c] + chunk.iter().copied().sum();
        }
    }
}

/// Gradients of a layer with weights and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub dx: Tensor4<T>,
    pub dw: Tensor4<T>,
    pub db: Vec<T>,
}

/// Cross-correlation of `x [b, ic, h, w]` with `w [oc, ic, kh, kw]`.
pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, bias: &[T], g: &ConvGeom) -> Result<Tensor4<T>> {
    let [b, ic, h, wd] = x.shape;
    let [oc, wic, kh, kw] = w.shape;
    if wic != ic || kh != g.kh || kw != g.kw || bias.len() != oc {
        return Err(Error::shape("conv2d input vs weight", &x.shape, &w.shape));
    }
    let (oh, ow) = match (g.conv_out(h, kh), g.conv_out(wd, kw)) {
        (Some(a), Some(c)) => (a, c),
        _ => return Err(Error::shape("conv2d kernel larger than padded input", &x.shape, &w.shape)),
    };
    if let Some(tg) = via_transpose(g, ic, oc) {
        return conv2d_transpose_forward(x, &flip_kernel(w), bias, &tg);
    }
    let k = ic * kh * kw;
    let p = oh * ow;
    let mut y = Tensor4::zeros([b, oc, oh, ow]);
    let mut cols = vec![T::zero(); k * p];
    for bi in 0..b {
        im2col(x.item(bi), ic, h, wd, g, oh, ow, &mut cols);
        let yb = y.item_mut(bi);
        T::gemm(oc, k, p, T::one(), &w.data, (k as isize, 1), &cols, (p as isize, 1), T::zero(), yb, (p as isize, 1));
        add_bias(yb, bias, p);
    }
    Ok(y)
}

/// Backward of [`conv2d_forward`] given the upstream gradient `dy`.
pub fn conv2d_backward<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, dy: &Tensor4<T>, g: &ConvGeom) -> Result<LayerGrads<T>> {
    let [b, ic, h, wd] = x.shape;
    let [oc, _, kh, kw] = w.shape;
    let [db_, doc, oh, ow] = dy.shape;
    if db_ != b || doc != oc || g.conv_out(h, kh) != Some(oh) || g.conv_out(wd, kw) != Some(ow) {
        return Err(Error::shape("conv2d upstream gradient", &dy.shape, &x.shape));
    }
    if let Some(tg) = via_transpose(g, ic, oc) {
        let mut grads = conv2d_transpose_backward(x, &flip_kernel(w), dy, &tg)?;
        grads.dw = flip_kernel(&grads.dw);
        return Ok(grads);
    }
    let k = ic * kh * kw;
    let p = oh * ow;
    let mut dx = Tensor4::zeros(x.shape);
    let mut dw = Tensor4::zeros(w.shape);
    let mut dbias = vec![T::zero(); oc];
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = vec![T::zero(); k * p];
    for bi in 0..b {
        im2col(x.item(bi), ic, h, wd, g, oh, ow, &mut cols);
        let dyb = dy.item(bi);
        // dW += dY cols^T
        T::gemm(oc, p, k, T::one(), dyb, (p as isize, 1), &cols, (1, p as isize), T::one(), &mut dw.data, (k as isize, 1));
        // dcols = W^T dY
        T::gemm(k, oc, p, T::one(), &w.data, (1, k as isize), dyb, (p as isize, 1), T::zero(), &mut dcols, (p as isize, 1));
        col2im(&dcols, ic, h, wd, g, oh, ow, dx.item_mut(bi));
    }
    bias_grad(dy, &mut dbias);
    Ok(LayerGrads { dx, dw, db: dbias })
}

/// Transposed convolution of `x [b, ic, h, w]` with `w [ic, oc, kh, kw]`:
/// the adjoint of a convolution with the same weights and geometry.
pub fn conv2d_transpose_forward<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, bias: &[T], g: &ConvGeom) -> Result<Tensor4<T>> {
    let [b, ic, h, wd] = x.shape;
    let [wic, oc, kh, kw] = w.shape;
    if wic != ic || kh != g.kh || kw != g.kw || bias.len() != oc {
        return Err(Error::shape("conv2d_transpose input vs weight", &x.shape, &w.shape));
    }
    let (oh, ow) = match (g.tconv_out(h, kh), g.tconv_out(wd, kw)) {
        (Some(a), Some(c)) => (a, c),
        _ => return Err(Error::shape("conv2d_transpose geometry", &x.shape, &w.shape)),
    };
    let k = oc * kh * kw;
    let p = h * wd;
    let mut y = Tensor4::zeros([b, oc, oh, ow]);
    let mut cols = vec![T::zero(); k * p];
    for bi in 0..b {
        // cols = W^T x
        T::gemm(k, ic, p, T::one(), &w.data, (1, k as isize), x.item(bi), (p as isize, 1), T::zero(), &mut cols, (p as isize, 1));
        let yb = y.item_mut(bi);
        col2im(&cols, oc, oh, ow, g, h, wd, yb);
        add_bias(yb, bias, oh * ow);
    }
    Ok(y)
}

/// Backward of [`conv2d_transpose_forward`].
pub fn conv2d_transpose_backward<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, dy: &Tensor4<T>, g: &ConvGeom) -> Result<LayerGrads<T>> {
    let [b, ic, h, wd] = x.shape;
    let [_, oc, kh, kw] = w.shape;
    let [db_, doc, oh, ow] = dy.shape;
    if db_ != b || doc != oc || g.tconv_out(h, kh) != Some(oh) || g.tconv_out(wd, kw) != Some(ow) {
        return Err(Error::shape("conv2d_transpose upstream gradient", &dy.shape, &x.shape));
    }
    let k = oc * kh * kw;
    let p = h * wd;
    let mut dx = Tensor4::zeros(x.shape);
    let mut dw = Tensor4::zeros(w.shape);
    let mut dbias = vec![T::zero(); oc];
    let mut cols = vec![T::zero(); k * p];
    for bi in 0..b {
        im2col(dy.item(bi), oc, oh, ow, g, h, wd, &mut cols);
        // dx = W cols
        T::gemm(ic, k, p, T::one(), &w.data, (k as isize, 1), &cols, (p as isize, 1), T::zero(), dx.item_mut(bi), (p as isize, 1));
        // dW += x cols^T
        T::gemm(ic, p, k, T::one(), x.item(bi), (p as isize, 1), &cols, (1, p as isize), T::one(), &mut dw.data, (k as isize, 1));
    }
    bias_grad(dy, &mut dbias);
    Ok(LayerGrads { dx, dw, db: dbias })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnRunning<T> {
    pub fn new(channels: usize) -> Self {
        BnRunning {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// What the batch-norm backward pass needs from the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnCache<T> {
    pub x_hat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub mode: BnMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig { momentum: 0.1, eps: 1e-5 }
    }
}

/// Batch normalization over (batch, height, width) for each channel. In train
/// mode the running statistics are updated with the unbiased batch variance.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running: &mut BnRunning<T>,
    mode: BnMode,
    cfg: &BnConfig,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    let [b, c, _, _] = x.shape;
    if gamma.len() != c || beta.len() != c || running.mean.len() != c {
        return Err(Error::shape("batchnorm channels", &x.shape, &[gamma.len()]));
    }
    let plane = x.plane();
    let n = b * plane;
    if mode == BnMode::Train && n <= 1 {
        return Err(Error::Domain(format!("batchnorm needs more than one value per channel in train mode, got {n}")));
    }
    let eps = T::of_f64(cfg.eps);
    let mut y = Tensor4::zeros(x.shape);
    let mut x_hat = Tensor4::zeros(x.shape);
    let mut inv_std = vec![T::zero(); c];
    for ci in 0..c {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut sum = 0.0f64;
                for bi in 0..b {
                    let o = (bi * c + ci) * plane;
                    sum += x.data[o..o + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / n as f64;
                let mut ss = 0.0f64;
                for bi in 0..b {
                    let o = (bi * c + ci) * plane;
                    ss += x.data[o..o + plane].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
                }
                let var = ss / n as f64;
                let m = cfg.momentum;
                running.mean[ci] = T::of_f64((1.0 - m) * running.mean[ci].as_f64() + m * mean);
                running.var[ci] = T::of_f64((1.0 - m) * running.var[ci].as_f64() + m * var * n as f64 / (n - 1) as f64);
                (T::of_f64(mean), T::of_f64(var))
            }
            BnMode::Eval => (running.mean[ci], running.var[ci]),
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ci] = is;
        for bi in 0..b {
            let o = (bi * c + ci) * plane;
            for k in o..o + plane {
                let h = (x.data[k] - mean) * is;
                x_hat.data[k] = h;
                y.data[k] = gamma[ci] * h + beta[ci];
            }
        }
    }
    Ok((y, BnCache { x_hat, inv_std, mode }))
}

/// Returns (dx, dgamma, dbeta).
pub fn batchnorm_backward<T: Scalar>(dy: &Tensor4<T>, gamma: &[T], cache: &BnCache<T>) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    if dy.shape != cache.x_hat.shape {
        return Err(Error::shape("batchnorm upstream gradient", &dy.shape, &cache.x_hat.shape));
    }
    let [b, c, _, _] = dy.shape;
    let plane = dy.plane();
    let n = (b * plane) as f64;
    let mut dx = Tensor4::zeros(dy.shape);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ci in 0..c {
        let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
        for bi in 0..b {
            let o = (bi * c + ci) * plane;
            for k in o..o + plane {
                sdy += dy.data[k].as_f64();
                sdyx += (dy.data[k] * cache.x_hat.data[k]).as_f64();
            }
        }
        dbeta[ci] = T::of_f64(sdy);
        dgamma[ci] = T::of_f64(sdyx);
        let scale = gamma[ci] * cache.inv_std[ci];
        for bi in 0..b {
            let o = (bi * c + ci) * plane;
            for k in o..o + plane {
                dx.data[k] = match cache.mode {
                    BnMode::Train => {
                        let t = dy.data[k].as_f64() - sdy / n - cache.x_hat.data[k].as_f64() * sdyx / n;
                        scale * T::of_f64(t)
                    }
                    BnMode::Eval => scale * dy.data[k],
                };
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

pub fn leaky_relu_forward<T: Scalar>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

/// `x` is the forward input.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor4<T>, dy: &Tensor4<T>, slope: T) -> Result<Tensor4<T>> {
    if x.shape != dy.shape {
        return Err(Error::shape("leaky_relu upstream gradient", &dy.shape, &x.shape));
    }
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &g)| if v > T::zero() { g } else { slope * g })
        .collect();
    Ok(Tensor4 { shape: x.shape, data })
}

/// 2x2 max pooling with stride 2. Also returns the flat input index of each
/// maximum (first one on ties).
pub fn maxpool2_forward<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [b, c, h, w] = x.shape;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("maxpool2 needs even spatial dims", &x.shape, &[2, 2]));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor4::zeros([b, c, oh, ow]);
    let mut arg = vec![0u32; b * c * oh * ow];
    for bc in 0..b * c {
        let base = bc * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for k in [base + 2 * i * w + 2 * j + 1, base + (2 * i + 1) * w + 2 * j, base + (2 * i + 1) * w + 2 * j + 1] {
                    if x.data[k] > x.data[best] {
                        best = k;
                    }
                }
                let o = (bc * oh + i) * ow + j;
                y.data[o] = x.data[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward<T: Scalar>(input_shape: [usize; 4], argmax: &[u32], dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    if dy.len() != argmax.len() {
        return Err(Error::shape("maxpool2 upstream gradient", &dy.shape, &[argmax.len()]));
    }
    let mut dx = Tensor4::zeros(input_shape);
    for (&k, &g) in argmax.iter().zip(&dy.data) {
        dx.data[k as usize] = dx.data[k as usize] + g;
    }
    Ok(dx)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let [b, c, h, w] = x.shape;
    let mut y = Tensor4::zeros([b, c, 2 * h, 2 * w]);
    for bc in 0..b * c {
        for i in 0..2 * h {
            let src = &x.data[(bc * h + i / 2) * w..(bc * h + i / 2 + 1) * w];
            let dst = &mut y.data[(bc * 2 * h + i) * 2 * w..(bc * 2 * h + i + 1) * 2 * w];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = src[j / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(dy: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [b, c, h2, w2] = dy.shape;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::shape("upsample2 upstream gradient", &dy.shape, &[2, 2]));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor4::zeros([b, c, h, w]);
    for bc in 0..b * c {
        for i in 0..h2 {
            for j in 0..w2 {
                let o = (bc * h + i / 2) * w + j / 2;
                dx.data[o] = dx.data[o] + dy.data[(bc * h2 + i) * w2 + j];
            }
        }
    }
    Ok(dx)
}

/// Affine map of each batch item: `y = W x + b` with `w [out, in, 1, 1]`.
/// The input is read as `[batch, in]` whatever its trailing shape.
pub fn dense_forward<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    let b = x.batch();
    let n_in = x.item_len();
    let [n_out, w_in, _, _] = w.shape;
    if w_in != n_in || bias.len() != n_out || w.plane() != 1 {
        return Err(Error::shape("dense input vs weight", &x.shape, &w.shape));
    }
    let mut y = Tensor4::zeros([b, n_out, 1, 1]);
    for bi in 0..b {
        y.item_mut(bi).copy_from_slice(bias);
    }
    // y [b, out] += x [b, in] W^T
    T::gemm(b, n_in, n_out, T::one(), &x.data, (n_in as isize, 1), &w.data, (1, n_in as isize), T::one(), &mut y.data, (n_out as isize, 1));
    Ok(y)
}

pub fn dense_backward<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, dy: &Tensor4<T>) -> Result<LayerGrads<T>> {
    let b = x.batch();
    let n_in = x.item_len();
    let n_out = w.shape[0];
    if dy.batch() != b || dy.item_len() != n_out {
        return Err(Error::shape("dense upstream gradient", &dy.shape, &[b, n_out]));
    }
    let mut dx = Tensor4::zeros(x.shape);
    let mut dw = Tensor4::zeros(w.shape);
    // dW [out, in] = dy^T x
    T::gemm(n_out, b, n_in, T::one(), &dy.data, (1, n_out as isize), &x.data, (n_in as isize, 1), T::zero(), &mut dw.data, (n_in as isize, 1));
    // dx [b, in] = dy W
    T::gemm(b, n_out, n_in, T::one(), &dy.data, (n_out as isize, 1), &w.data, (n_in as isize, 1), T::zero(), &mut dx.data, (n_in as isize, 1));
    let mut db = vec![T::zero(); n_out];
    for bi in 0..b {
        for (d, &g) in db.iter_mut().zip(dy.item(bi)) {
            *d = *d + g;
        }
    }
    Ok(LayerGrads { dx, dw, db })
}

/// Extends height and width to `h, w` by repeating the last row and column.
pub fn pad_replicate<T: Scalar>(x: &Tensor4<T>, h: usize, w: usize) -> Result<Tensor4<T>> {
    let [b, c, xh, xw] = x.shape;
    if h < xh || w < xw || xh == 0 || xw == 0 {
        return Err(Error::shape("pad_replicate target smaller than input", &x.shape, &[h, w]));
    }
    let mut y = Tensor4::zeros([b, c, h, w]);
    for bc in 0..b * c {
        for i in 0..h {
            let src = &x.data[(bc * xh + i.min(xh - 1)) * xw..(bc * xh + i.min(xh - 1) + 1) * xw];
            let dst = &mut y.data[(bc * h + i) * w..(bc * h + i + 1) * w];
            dst[..xw].copy_from_slice(src);
            let last = src[xw - 1];
            dst[xw..].fill(last);
        }
    }
    Ok(y)
}

/// Keeps the top-left `h x w` block.
pub fn crop<T: Scalar>(x: &Tensor4<T>, h: usize, w: usize) -> Result<Tensor4<T>> {
    let [b, c, xh, xw] = x.shape;
    if h > xh || w > xw {
        return Err(Error::shape("crop larger than input", &x.shape, &[h, w]));
    }
    let mut y = Tensor4::zeros([b, c, h, w]);
    for bc in 0..b * c {
        for i in 0..h {
            let src = &x.data[(bc * xh + i) * xw..(bc * xh + i) * xw + w];
            y.data[(bc * h + i) * w..(bc * h + i + 1) * w].copy_from_slice(src);
        }
    }
    Ok(y)
}

/// Adjoint of [`crop`]: embeds `dy` into zeros of `input_shape`.
pub fn crop_backward<T: Scalar>(dy: &Tensor4<T>, input_shape: [usize; 4]) -> Result<Tensor4<T>> {
    let [b, c, h, w] = dy.shape;
    let [_, _, xh, xw] = input_shape;
    if input_shape[0] != b || input_shape[1] != c || h > xh || w > xw {
        return Err(Error::shape("crop upstream gradient", &dy.shape, &input_shape));
    }
    let mut dx = Tensor4::zeros(input_shape);
    for bc in 0..b * c {
        for i in 0..h {
            dx.data[(bc * xh + i) * xw..(bc * xh + i) * xw + w].copy_from_slice(&dy.data[(bc * h + i) * w..(bc * h + i + 1) * w]);
        }
    }
    Ok(dx)
}

/// Mean over samples of the squared error norm divided by the cell count,
/// and its gradient with respect to `pred`.
pub fn mse_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    if pred.shape != target.shape {
        return Err(Error::shape("mse_loss prediction vs target", &pred.shape, &target.shape));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0f64;
    let scale = 2.0 / n;
    let data = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            loss += d * d;
            T::of_f64(scale * d)
        })
        .collect();
    Ok((loss / n, Tensor4 { shape: pred.shape, data }))
}
