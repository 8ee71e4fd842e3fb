use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};
use crate::mask::Mask;

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;
/// Lower clamp applied to probabilities inside the cross-entropy log.
pub const LOG_FLOOR: f32 = 1e-12;

fn same_rank_shape(input: &Tensor, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if input.shape().len() == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn conv_geometry(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<[usize; 6]> {
    let (n, c_in, h, w) = input.nchw()?;
    let &[c_out, wc_in, kh, kw] = weight.shape() else {
        return Err(Error::shape(format!(
            "kernels must be [C_out,C_in,k,k], got {:?}",
            weight.shape()
        )));
    };
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if wc_in != c_in {
        return Err(Error::shape(format!(
            "kernels expect {wc_in} input channels, input has {c_in}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape(format!(
                "bias has {} entries for {c_out} output channels",
                b.len()
            )));
        }
    }
    Ok([n, c_in, h, w, c_out, kh])
}

/// Valid index range of `i` such that `i + d` stays in `0..len`.
#[inline]
fn shifted_range(len: usize, d: isize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    lo..hi.max(lo)
}

/// Same-padded 2-D cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, c_in, h, w, c_out, k] = conv_geometry(input, weight, Some(bias))?;
    let pad = (k / 2) as isize;
    let plane = h * w;
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = vec![0.0f32; n * c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, o)| {
        let (img, oc) = (idx / c_out, idx % c_out);
        o.fill(b[oc]);
        for ic in 0..c_in {
            let xin = &x[(img * c_in + ic) * plane..][..plane];
            let kern = &wt[(oc * c_in + ic) * k * k..][..k * k];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let wv = kern[ky * k + kx];
                    let xs = shifted_range(w, dx);
                    for y in shifted_range(h, dy) {
                        let src = ((y as isize + dy) as usize) * w;
                        let orow = &mut o[y * w + xs.start..y * w + xs.end];
                        let irow = &xin[(src as isize + xs.start as isize + dx) as usize..][..orow.len()];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&same_rank_shape(input, n, c_out, h, w), out)
}

/// Gradients of [`conv2d`] with respect to input, kernels and bias.
pub fn conv2d_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<Conv2dGrads> {
    let [n, c_in, h, w, c_out, k] = conv_geometry(input, weight, None)?;
    let (gn, gc, gh, gw) = grad_out.nchw()?;
    if (gn, gc, gh, gw) != (n, c_out, h, w) {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match conv output [{n},{c_out},{h},{w}]",
            grad_out.shape()
        )));
    }
    let pad = (k / 2) as isize;
    let plane = h * w;
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();

    let mut gx = vec![0.0f32; n * c_in * plane];
    gx.par_chunks_mut(plane).enumerate().for_each(|(idx, gi)| {
        let (img, ic) = (idx / c_in, idx % c_in);
        for oc in 0..c_out {
            let go = &g[(img * c_out + oc) * plane..][..plane];
            let kern = &wt[(oc * c_in + ic) * k * k..][..k * k];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let wv = kern[ky * k + kx];
                    let xs = shifted_range(w, dx);
                    for yo in shifted_range(h, dy) {
                        let yi = (yo as isize + dy) as usize;
                        let grow = &go[yo * w + xs.start..yo * w + xs.end];
                        let start = (yi * w) as isize + xs.start as isize + dx;
                        let irow = &mut gi[start as usize..][..grow.len()];
                        for (iv, gv) in irow.iter_mut().zip(grow) {
                            *iv += wv * gv;
                        }
                    }
                }
            }
        }
    });

    let mut gw_buf = vec![0.0f32; c_out * c_in * k * k];
    gw_buf
        .par_chunks_mut(c_in * k * k)
        .enumerate()
        .for_each(|(oc, gk)| {
            for ic in 0..c_in {
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let xs = shifted_range(w, dx);
                        let mut acc = 0.0f32;
                        for img in 0..n {
                            let go = &g[(img * c_out + oc) * plane..][..plane];
                            let xin = &x[(img * c_in + ic) * plane..][..plane];
                            for yo in shifted_range(h, dy) {
                                let yi = (yo as isize + dy) as usize;
                                let grow = &go[yo * w + xs.start..yo * w + xs.end];
                                let start = (yi * w) as isize + xs.start as isize + dx;
                                let irow = &xin[start as usize..][..grow.len()];
                                for (gv, iv) in grow.iter().zip(irow) {
                                    acc += gv * iv;
                                }
                            }
                        }
                        gk[(ic * k + ky) * k + kx] = acc;
                    }
                }
            }
        });

    let mut gb = vec![0.0f32; c_out];
    for (oc, b) in gb.iter_mut().enumerate() {
        for img in 0..n {
            for v in &g[(img * c_out + oc) * plane..][..plane] {
                *b += v;
            }
        }
    }

    Ok(Conv2dGrads {
        input: Tensor::new(input.shape(), gx)?,
        weight: Tensor::new(weight.shape(), gw_buf)?,
        bias: Tensor::new(&[c_out], gb)?,
    })
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape(), data).expect("same shape")
}

/// Passes `grad_out` through where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "relu gradient {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel running mean and (unbiased) variance used in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub struct BatchNormCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    shape: Vec<usize>,
}

fn bn_check(input: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &RunningStats) -> Result<[usize; 3]> {
    let (n, c, h, w) = input.nchw()?;
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::shape(format!(
            "batchnorm over {c} channels got gamma {}, beta {}, stats {}/{}",
            gamma.len(),
            beta.len(),
            stats.mean.len(),
            stats.var.len()
        )));
    }
    Ok([n, c, h * w])
}

/// Normalizes each channel with statistics over the batch and spatial axes,
/// then folds them into `stats` with momentum [`BN_MOMENTUM`].
pub fn batchnorm_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
) -> Result<(Tensor, BatchNormCache)> {
    let [n, c, plane] = bn_check(input, gamma, beta, stats)?;
    let m = (n * plane) as f32;
    let x = input.data();
    let mut xhat = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    let mut inv_std = vec![0.0f32; c];
    for ch in 0..c {
        let planes = || (0..n).map(move |img| (img * c + ch) * plane);
        let mut sum = 0.0f32;
        for off in planes() {
            for v in &x[off..off + plane] {
                sum += v;
            }
        }
        let mean = sum / m;
        let mut sq = 0.0f32;
        for off in planes() {
            for v in &x[off..off + plane] {
                let d = v - mean;
                sq += d * d;
            }
        }
        let var = sq / m;
        let is = 1.0 / (var + BN_EPSILON).sqrt();
        inv_std[ch] = is;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for off in planes() {
            for i in off..off + plane {
                let xh = (x[i] - mean) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
        let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
        stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean;
        stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * unbiased;
    }
    let cache = BatchNormCache {
        xhat,
        inv_std,
        shape: input.shape().to_vec(),
    };
    Ok((Tensor::new(input.shape(), out)?, cache))
}

pub fn batchnorm_infer(input: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &RunningStats) -> Result<Tensor> {
    let [n, c, plane] = bn_check(input, gamma, beta, stats)?;
    let x = input.data();
    let mut out = vec![0.0f32; x.len()];
    for img in 0..n {
        for ch in 0..c {
            let is = 1.0 / (stats.var[ch] + BN_EPSILON).sqrt();
            let (g, b, mu) = (gamma.data()[ch], beta.data()[ch], stats.mean[ch]);
            let off = (img * c + ch) * plane;
            for i in off..off + plane {
                out[i] = g * (x[i] - mu) * is + b;
            }
        }
    }
    Tensor::new(input.shape(), out)
}

/// Returns `(grad_input, grad_gamma, grad_beta)` for a train-mode forward.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::shape(format!(
            "batchnorm gradient {:?} vs cached {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    let (n, c, h, w) = grad_out.nchw()?;
    let plane = h * w;
    let m = (n * plane) as f32;
    let g = grad_out.data();
    let mut gx = vec![0.0f32; g.len()];
    let mut ggamma = vec![0.0f32; c];
    let mut gbeta = vec![0.0f32; c];
    for ch in 0..c {
        let planes = || (0..n).map(move |img| (img * c + ch) * plane);
        let mut sum_g = 0.0f32;
        let mut sum_gx = 0.0f32;
        for off in planes() {
            for i in off..off + plane {
                sum_g += g[i];
                sum_gx += g[i] * cache.xhat[i];
            }
        }
        gbeta[ch] = sum_g;
        ggamma[ch] = sum_gx;
        let scale = gamma.data()[ch] * cache.inv_std[ch] / m;
        for off in planes() {
            for i in off..off + plane {
                gx[i] = scale * (m * g[i] - sum_g - cache.xhat[i] * sum_gx);
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape(), gx)?,
        Tensor::new(&[c], ggamma)?,
        Tensor::new(&[c], gbeta)?,
    ))
}

// ---------------------------------------------------------------------------
// 2×2 max pooling and index unpooling
// ---------------------------------------------------------------------------

/// Argmax positions recorded by [`maxpool2`]: one offset per output cell,
/// `dy * 2 + dx` inside that cell's own 2×2 input window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    offsets: Vec<u8>,
}

impl PoolIndices {
    pub fn from_offsets(input_shape: &[usize], offsets: Vec<u8>) -> Result<Self> {
        let probe = Tensor::zeros(input_shape);
        let (n, c, h, w) = probe.nchw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("pool input {input_shape:?} has odd spatial dims")));
        }
        if offsets.len() != n * c * (h / 2) * (w / 2) {
            return Err(Error::shape("pool index count does not match geometry"));
        }
        if offsets.iter().any(|&o| o > 3) {
            return Err(Error::shape("pool index outside its 2x2 window"));
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            offsets,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut s = self.input_shape.clone();
        let r = s.len();
        s[r - 2] /= 2;
        s[r - 1] /= 2;
        s
    }

    pub fn offsets(&self) -> &[u8] {
        &self.offsets
    }

    /// Flat input index addressed by output cell `i`.
    pub fn source_index(&self, i: usize) -> usize {
        let r = self.input_shape.len();
        let (h, w) = (self.input_shape[r - 2], self.input_shape[r - 1]);
        let (oh, ow) = (h / 2, w / 2);
        let plane = i / (oh * ow);
        let rem = i % (oh * ow);
        let (oy, ox) = (rem / ow, rem % ow);
        let off = self.offsets[i] as usize;
        plane * h * w + (2 * oy + off / 2) * w + 2 * ox + off % 2
    }
}

pub fn maxpool2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (n, c, h, w) = input.nchw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "max pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut offsets = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = 0u8;
                let mut best_v = x[base + 2 * oy * w + 2 * ox];
                for off in 1..4u8 {
                    let v = x[base + (2 * oy + off as usize / 2) * w + 2 * ox + off as usize % 2];
                    // strict comparison keeps the lowest index on ties
                    if v > best_v {
                        best_v = v;
                        best = off;
                    }
                }
                out.push(best_v);
                offsets.push(best);
            }
        }
    }
    let shape = same_rank_shape(input, n, c, oh, ow);
    let indices = PoolIndices {
        input_shape: input.shape().to_vec(),
        offsets,
    };
    Ok((Tensor::new(&shape, out)?, indices))
}

/// Routes each output gradient back to its argmax cell.
pub fn maxpool2_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    maxunpool2(grad_out, indices, indices.input_shape())
}

/// Scatters `values` to the positions recorded in `indices`; zero elsewhere.
pub fn maxunpool2(values: &Tensor, indices: &PoolIndices, out_shape: &[usize]) -> Result<Tensor> {
    if out_shape != indices.input_shape() {
        return Err(Error::shape(format!(
            "unpool target {out_shape:?} does not match pooled geometry {:?}",
            indices.input_shape()
        )));
    }
    if values.shape() != indices.output_shape().as_slice() {
        return Err(Error::shape(format!(
            "unpool values {:?} do not match pooled output {:?}",
            values.shape(),
            indices.output_shape()
        )));
    }
    let mut out = vec![0.0f32; out_shape.iter().product()];
    for (i, &v) in values.data().iter().enumerate() {
        out[indices.source_index(i)] = v;
    }
    Tensor::new(out_shape, out)
}

/// Gathers the gradient at each recorded position.
pub fn maxunpool2_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != indices.input_shape() {
        return Err(Error::shape(format!(
            "unpool gradient {:?} does not match {:?}",
            grad_out.shape(),
            indices.input_shape()
        )));
    }
    let g = grad_out.data();
    let data = (0..indices.offsets.len())
        .map(|i| g[indices.source_index(i)])
        .collect();
    Tensor::new(&indices.output_shape(), data)
}

// ---------------------------------------------------------------------------
// Two-class pixel softmax and cross-entropy
// ---------------------------------------------------------------------------

fn two_class_planes(t: &Tensor) -> Result<(usize, usize)> {
    let (n, c, h, w) = t.nchw()?;
    if c != 2 {
        return Err(Error::shape(format!("pixel softmax needs 2 channels, got {c}")));
    }
    Ok((n, h * w))
}

/// Per-pixel softmax over the channel axis (channel 0 background, 1 iris).
pub fn pixel_softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, plane) = two_class_planes(logits)?;
    let l = logits.data();
    let mut out = vec![0.0f32; l.len()];
    for img in 0..n {
        let base = img * 2 * plane;
        for i in 0..plane {
            let (a, b) = (l[base + i], l[base + plane + i]);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let s = ea + eb;
            out[base + i] = ea / s;
            out[base + plane + i] = eb / s;
        }
    }
    Tensor::new(logits.shape(), out)
}

pub fn pixel_softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, plane) = two_class_planes(probs)?;
    if grad_out.shape() != probs.shape() {
        return Err(Error::shape("softmax gradient shape mismatch"));
    }
    let p = probs.data();
    let g = grad_out.data();
    let mut out = vec![0.0f32; p.len()];
    for img in 0..n {
        let base = img * 2 * plane;
        for i in 0..plane {
            let (i0, i1) = (base + i, base + plane + i);
            let dot = p[i0] * g[i0] + p[i1] * g[i1];
            out[i0] = p[i0] * (g[i0] - dot);
            out[i1] = p[i1] * (g[i1] - dot);
        }
    }
    Tensor::new(probs.shape(), out)
}

/// Mean over all pixels of `-w_c · ln(max(p_target, LOG_FLOOR))`.
///
/// Returns the loss and its gradient with respect to `probs`. `targets`
/// holds one mask per image of the batch.
pub fn cross_entropy_loss(
    probs: &Tensor,
    targets: &[&Mask],
    class_weights: Option<[f32; 2]>,
) -> Result<(f32, Tensor)> {
    let (n, c, h, w) = probs.nchw()?;
    if c != 2 {
        return Err(Error::shape(format!("cross-entropy needs 2 channels, got {c}")));
    }
    if targets.len() != n {
        return Err(Error::shape(format!(
            "{} target masks for a batch of {n}",
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| t.dims() != (h, w)) {
        return Err(Error::shape(format!(
            "target mask {}x{} vs probabilities {w}x{h}",
            t.width(),
            t.height()
        )));
    }
    let wts = class_weights.unwrap_or([1.0, 1.0]);
    let plane = h * w;
    let count = (n * plane) as f32;
    let p = probs.data();
    let mut grad = vec![0.0f32; p.len()];
    let mut total = 0.0f64;
    for (img, mask) in targets.iter().enumerate() {
        for (i, &iris) in mask.bits().iter().enumerate() {
            let cls = iris as usize;
            let idx = (img * 2 + cls) * plane + i;
            let pt = p[idx];
            let clamped = pt.max(LOG_FLOOR);
            total += -(wts[cls] as f64) * (clamped as f64).ln();
            if pt > LOG_FLOOR {
                grad[idx] = -wts[cls] / (count * pt);
            }
        }
    }
    let loss = (total / count as f64) as f32;
    Ok((loss, Tensor::new(probs.shape(), grad)?))
}
