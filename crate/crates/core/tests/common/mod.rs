//! Independent f64 reference kernels and finite-difference helpers.
//!
//! Nothing here calls into the crate's kernels: the references are plain
//! loops written from the operation definitions, evaluated in f64 so that a
//! central difference with step 1e-3 is accurate well below the tolerance.
#![allow(dead_code)]

use pmiris::rng::Stream;

pub const FD_STEP: f64 = 1e-3;
pub const FD_RTOL: f64 = 1e-3;

pub fn random_vec(s: &mut Stream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| s.range(-scale, scale)).collect()
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Same-padded cross-correlation over `[n, c_in, h, w]`.
pub fn conv_ref(
    x: &[f64],
    [n, c_in, h, w]: [usize; 4],
    k: &[f64],
    c_out: usize,
    ks: usize,
    b: &[f64],
) -> Vec<f64> {
    let pad = (ks / 2) as isize;
    let mut out = vec![0.0; n * c_out * h * w];
    for img in 0..n {
        for oc in 0..c_out {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b[oc];
                    for ic in 0..c_in {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let iy = y as isize + ky as isize - pad;
                                let ix = xx as isize + kx as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += k[((oc * c_in + ic) * ks + ky) * ks + kx]
                                    * x[((img * c_in + ic) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((img * c_out + oc) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

pub fn relu_ref(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Train-mode batch normalization with biased batch variance.
pub fn bn_ref(x: &[f64], [n, c, h, w]: [usize; 4], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let idx: Vec<usize> = (0..n)
            .flat_map(|img| (0..plane).map(move |i| (img * c + ch) * plane + i))
            .collect();
        let mean = idx.iter().map(|&i| x[i]).sum::<f64>() / m;
        let var = idx.iter().map(|&i| (x[i] - mean).powi(2)).sum::<f64>() / m;
        for &i in &idx {
            out[i] = gamma[ch] * (x[i] - mean) / (var + eps).sqrt() + beta[ch];
        }
    }
    out
}

pub fn maxpool_ref(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::new();
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x[p * h * w + (2 * oy + dy) * w + 2 * ox + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn softmax_ref(l: &[f64], n: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; l.len()];
    for img in 0..n {
        for i in 0..plane {
            let (a, b) = (l[img * 2 * plane + i], l[img * 2 * plane + plane + i]);
            let (ea, eb) = (a.exp(), b.exp());
            out[img * 2 * plane + i] = ea / (ea + eb);
            out[img * 2 * plane + plane + i] = eb / (ea + eb);
        }
    }
    out
}

/// Mean weighted negative log-likelihood; `labels[i]` is 1 for iris.
pub fn ce_ref(p: &[f64], labels: &[Vec<bool>], plane: usize, weights: [f64; 2]) -> f64 {
    let mut total = 0.0;
    for (img, lab) in labels.iter().enumerate() {
        for (i, &iris) in lab.iter().enumerate() {
            let c = iris as usize;
            total += -weights[c] * p[(img * 2 + c) * plane + i].max(1e-12).ln();
        }
    }
    total / (labels.len() * plane) as f64
}

// ---------------------------------------------------------------------------
// Gradient suite: analytic backward kernels vs central differences of the
// f64 references, each on randomized small instances.
// ---------------------------------------------------------------------------

use pmiris::tensor::{self, RunningStats, Tensor};
use pmiris::Mask;

pub struct GradReport {
    pub op: &'static str,
    pub instances: usize,
    pub worst_rel_err: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_err < FD_RTOL
    }
}

fn tensor(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape, to_f32(v)).unwrap()
}

/// Values rounded through f32 so the reference sees exactly what the kernel sees.
fn random_f32_exact(s: &mut Stream, n: usize, scale: f64) -> Vec<f64> {
    random_vec(s, n, scale).into_iter().map(|v| v as f32 as f64).collect()
}

fn worst(errs: impl IntoIterator<Item = f64>) -> f64 {
    errs.into_iter().fold(0.0, f64::max)
}

pub fn check_conv2d(s: &mut Stream, instances: usize) -> GradReport {
    let mut errs = Vec::new();
    for i in 0..instances {
        let (n, c_in, c_out) = (1 + i % 2, 1 + i % 3, 2);
        let (h, w) = (5, 4 + i % 3);
        let dims = [n, c_in, h, w];
        let x = random_f32_exact(s, n * c_in * h * w, 1.0);
        let k = random_f32_exact(s, c_out * c_in * 9, 1.0);
        let b = random_f32_exact(s, c_out, 1.0);
        let r = random_f32_exact(s, n * c_out * h * w, 1.0);
        let grads = tensor::conv2d_backward(
            &tensor(&dims, &x),
            &tensor(&[c_out, c_in, 3, 3], &k),
            &tensor(&[n, c_out, h, w], &r),
        )
        .unwrap();
        let nx = numeric_grad(&x, |xv| dot(&r, &conv_ref(xv, dims, &k, c_out, 3, &b)));
        let nk = numeric_grad(&k, |kv| dot(&r, &conv_ref(&x, dims, kv, c_out, 3, &b)));
        let nb = numeric_grad(&b, |bv| dot(&r, &conv_ref(&x, dims, &k, c_out, 3, bv)));
        errs.push(rel_err(&to_f64(grads.input.data()), &nx));
        errs.push(rel_err(&to_f64(grads.weight.data()), &nk));
        errs.push(rel_err(&to_f64(grads.bias.data()), &nb));
    }
    GradReport {
        op: "conv2d",
        instances,
        worst_rel_err: worst(errs),
    }
}

pub fn check_relu(s: &mut Stream, instances: usize) -> GradReport {
    let mut errs = Vec::new();
    for _ in 0..instances {
        let x: Vec<f64> = random_f32_exact(s, 2 * 4 * 4, 1.0)
            .into_iter()
            .map(|v| if v.abs() < 1e-2 { v + 0.05 } else { v })
            .collect();
        let r = random_f32_exact(s, x.len(), 1.0);
        let g = tensor::relu_backward(&tensor(&[2, 4, 4], &x), &tensor(&[2, 4, 4], &r)).unwrap();
        let num = numeric_grad(&x, |xv| dot(&r, &relu_ref(xv)));
        errs.push(rel_err(&to_f64(g.data()), &num));
    }
    GradReport {
        op: "relu",
        instances,
        worst_rel_err: worst(errs),
    }
}

pub fn check_batchnorm(s: &mut Stream, instances: usize) -> GradReport {
    let mut errs = Vec::new();
    for i in 0..instances {
        let dims = [1 + i % 3, 2, 3, 4];
        let len: usize = dims.iter().product();
        let x = random_f32_exact(s, len, 2.0);
        let gamma = random_f32_exact(s, 2, 1.5);
        let beta = random_f32_exact(s, 2, 1.0);
        let r = random_f32_exact(s, len, 1.0);
        let mut stats = RunningStats::new(2);
        let (_, cache) = tensor::batchnorm_train(
            &tensor(&dims, &x),
            &tensor(&[2], &gamma),
            &tensor(&[2], &beta),
            &mut stats,
        )
        .unwrap();
        let (gx, gg, gb) =
            tensor::batchnorm_backward(&cache, &tensor(&[2], &gamma), &tensor(&dims, &r)).unwrap();
        let eps = tensor::BN_EPSILON as f64;
        let nx = numeric_grad(&x, |xv| dot(&r, &bn_ref(xv, dims, &gamma, &beta, eps)));
        let ng = numeric_grad(&gamma, |gv| dot(&r, &bn_ref(&x, dims, gv, &beta, eps)));
        let nb = numeric_grad(&beta, |bv| dot(&r, &bn_ref(&x, dims, &gamma, bv, eps)));
        errs.push(rel_err(&to_f64(gx.data()), &nx));
        errs.push(rel_err(&to_f64(gg.data()), &ng));
        errs.push(rel_err(&to_f64(gb.data()), &nb));
    }
    GradReport {
        op: "batchnorm",
        instances,
        worst_rel_err: worst(errs),
    }
}

/// Random pooling input whose 2×2 windows have no near-ties.
fn untied_pool_input(s: &mut Stream, dims: [usize; 4]) -> Vec<f64> {
    let [n, c, h, w] = dims;
    loop {
        let x = random_f32_exact(s, n * c * h * w, 1.0);
        let ok = (0..n * c).all(|p| {
            (0..h / 2).all(|oy| {
                (0..w / 2).all(|ox| {
                    let mut v: Vec<f64> = (0..4)
                        .map(|o| x[p * h * w + (2 * oy + o / 2) * w + 2 * ox + o % 2])
                        .collect();
                    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    v[3] - v[2] > 1e-2
                })
            })
        });
        if ok {
            return x;
        }
    }
}

pub fn check_maxpool(s: &mut Stream, instances: usize) -> GradReport {
    let mut errs = Vec::new();
    for i in 0..instances {
        let dims = [1 + i % 2, 2, 4, 6];
        let x = untied_pool_input(s, dims);
        let r = random_f32_exact(s, x.len() / 4, 1.0);
        let (_, idx) = tensor::maxpool2(&tensor(&dims, &x)).unwrap();
        let g = tensor::maxpool2_backward(&idx, &tensor(&[dims[0], 2, 2, 3], &r)).unwrap();
        let num = numeric_grad(&x, |xv| dot(&r, &maxpool_ref(xv, dims)));
        errs.push(rel_err(&to_f64(g.data()), &num));
    }
    GradReport {
        op: "maxpool2",
        instances,
        worst_rel_err: worst(errs),
    }
}

pub fn check_maxunpool(s: &mut Stream, instances: usize) -> GradReport {
    let mut errs = Vec::new();
    for _ in 0..instances {
        let dims = [1, 2, 4, 4];
        let src = untied_pool_input(s, dims);
        let (_, idx) = tensor::maxpool2(&tensor(&dims, &src)).unwrap();
        let vals = random_f32_exact(s, 8, 1.0);
        let r = random_f32_exact(s, 32, 1.0);
        let g = tensor::maxunpool2_backward(&idx, &tensor(&dims, &r)).unwrap();
        // reference scatter: each value lands on its window's maximum
        let num = numeric_grad(&vals, |v| {
            let mut out = vec![0.0; 32];
            for p in 0..2 {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let cell = |o: usize| p * 16 + (2 * oy + o / 2) * 4 + 2 * ox + o % 2;
                        let arg = (0..4)
                            .max_by(|&a, &b| src[cell(a)].partial_cmp(&src[cell(b)]).unwrap())
                            .unwrap();
                        out[cell(arg)] = v[p * 4 + oy * 2 + ox];
                    }
                }
            }
            dot(&r, &out)
        });
        errs.push(rel_err(&to_f64(g.data()), &num));
    }
    GradReport {
        op: "maxunpool2",
        instances,
        worst_rel_err: worst(errs),
    }
}

pub fn check_softmax(s: &mut Stream, instances: usize) -> GradReport {
    let mut errs = Vec::new();
    for i in 0..instances {
        let n = 1 + i % 2;
        let l = random_f32_exact(s, n * 2 * 9, 3.0);
        let r = random_f32_exact(s, l.len(), 1.0);
        let p = tensor::pixel_softmax(&tensor(&[n, 2, 3, 3], &l)).unwrap();
        let g = tensor::pixel_softmax_backward(&p, &tensor(&[n, 2, 3, 3], &r)).unwrap();
        let num = numeric_grad(&l, |lv| dot(&r, &softmax_ref(lv, n, 9)));
        errs.push(rel_err(&to_f64(g.data()), &num));
    }
    GradReport {
        op: "pixel_softmax",
        instances,
        worst_rel_err: worst(errs),
    }
}

pub fn check_cross_entropy(s: &mut Stream, instances: usize) -> GradReport {
    let mut errs = Vec::new();
    for i in 0..instances {
        let plane = 16;
        let p: Vec<f64> = (0..2 * plane).map(|_| s.range(0.05, 0.95) as f32 as f64).collect();
        let labels: Vec<bool> = (0..plane).map(|_| s.below(2) == 1).collect();
        let weights = if i % 2 == 0 { [1.0, 1.0] } else { [0.7, 2.5] };
        let mask = Mask::from_bits(4, 4, labels.clone()).unwrap();
        let (loss, g) = tensor::cross_entropy_loss(
            &tensor(&[2, 4, 4], &p),
            &[&mask],
            Some([weights[0] as f32, weights[1] as f32]),
        )
        .unwrap();
        let lab = vec![labels];
        let exact = ce_ref(&p, &lab, plane, weights);
        errs.push(((loss as f64) - exact).abs() / exact.abs().max(1e-12));
        let num = numeric_grad(&p, |pv| ce_ref(pv, &lab, plane, weights));
        errs.push(rel_err(&to_f64(g.data()), &num));
    }
    GradReport {
        op: "cross_entropy_loss",
        instances,
        worst_rel_err: worst(errs),
    }
}

pub fn gradient_suite(seed: u64, instances: usize) -> Vec<GradReport> {
    let mut s = Stream::new(seed);
    vec![
        check_conv2d(&mut s, instances),
        check_relu(&mut s, instances),
        check_batchnorm(&mut s, instances),
        check_maxpool(&mut s, instances),
        check_maxunpool(&mut s, instances),
        check_softmax(&mut s, instances),
        check_cross_entropy(&mut s, instances),
    ]
}
