use image::GrayImage;

use super::{ModelConfig, KERNEL, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{self, BatchNormCache, Mode, PoolIndices, RunningStats, Tensor};

/// One 3×3 convolution, optionally followed by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RunningStats,
}

impl ConvUnit {
    fn new(name: String, c_in: usize, c_out: usize, with_bn: bool, rng: &mut Stream) -> Self {
        // He-normal, fan-in scaled
        let std = (2.0 / (c_in * KERNEL * KERNEL) as f64).sqrt();
        let w: Vec<f32> = (0..c_out * c_in * KERNEL * KERNEL)
            .map(|_| rng.normal(0.0, std) as f32)
            .collect();
        Self {
            name,
            weight: Tensor::new(&[c_out, c_in, KERNEL, KERNEL], w).expect("sized"),
            bias: Tensor::zeros(&[c_out]),
            bn: with_bn.then(|| BatchNorm {
                gamma: Tensor::full(&[c_out], 1.0),
                beta: Tensor::zeros(&[c_out]),
                stats: RunningStats::new(c_out),
            }),
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.weight, &mut self.bias];
        if let Some(bn) = &mut self.bn {
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        v
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.weight, &self.bias];
        if let Some(bn) = &self.bn {
            v.push(&bn.gamma);
            v.push(&bn.beta);
        }
        v
    }
}

/// One node of the network's execution plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Conv { unit: usize, relu: bool },
    Pool { slot: usize },
    Unpool { slot: usize },
    Softmax,
}

/// Checks that every pool's indices are consumed by exactly one later unpool,
/// in mirrored (last-in, first-out) order, and that spatial sizes line up.
pub fn audit_pool_pairing(plan: &[Step], input_size: (usize, usize)) -> Result<()> {
    let mut open: Vec<(usize, (usize, usize))> = Vec::new();
    let mut consumed = std::collections::HashSet::new();
    let mut size = input_size;
    for step in plan {
        match *step {
            Step::Pool { slot } => {
                if open.iter().any(|&(s, _)| s == slot) || consumed.contains(&slot) {
                    return Err(Error::config(format!("pool slot {slot} reused")));
                }
                if size.0 % 2 != 0 || size.1 % 2 != 0 {
                    return Err(Error::config(format!("pool on odd size {size:?}")));
                }
                open.push((slot, size));
                size = (size.0 / 2, size.1 / 2);
            }
            Step::Unpool { slot } => match open.pop() {
                Some((s, before)) if s == slot => {
                    consumed.insert(slot);
                    size = before;
                }
                other => {
                    return Err(Error::config(format!(
                        "unpool slot {slot} does not mirror the open pool {:?}",
                        other.map(|o| o.0)
                    )))
                }
            },
            Step::Conv { .. } | Step::Softmax => {}
        }
    }
    if !open.is_empty() {
        return Err(Error::config(format!(
            "pools {:?} have no matching unpool",
            open.iter().map(|o| o.0).collect::<Vec<_>>()
        )));
    }
    if size != input_size {
        return Err(Error::config("output size differs from input size"));
    }
    Ok(())
}

pub(crate) enum StepCache {
    Conv {
        input: Tensor,
        bn: Option<BatchNormCache>,
        pre_relu: Tensor,
    },
    Pool,
    Unpool,
    Softmax {
        probs: Tensor,
    },
}

/// Activations recorded by a training forward pass.
pub(crate) struct Trace {
    steps: Vec<StepCache>,
    indices: Vec<Option<PoolIndices>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub units: Vec<ConvUnit>,
    pub mode: Mode,
    plan: Vec<Step>,
}

impl Model {
    /// Deterministic He-initialized network for `config`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Stream::fork(seed, 0x5e9_0e7);
        let c = &config.channels_per_block;
        let b = config.num_blocks();
        let mut units = Vec::new();
        let mut plan = Vec::new();
        let push = |units: &mut Vec<ConvUnit>, plan: &mut Vec<Step>, name: String, cin, cout, rng: &mut Stream| {
            plan.push(Step::Conv {
                unit: units.len(),
                relu: true,
            });
            units.push(ConvUnit::new(name, cin, cout, true, rng));
        };
        let mut cin = 1;
        for (i, (&ch, &n)) in c.iter().zip(&config.convs_per_block).enumerate() {
            for j in 0..n {
                push(&mut units, &mut plan, format!("enc{i}.conv{j}"), cin, ch, &mut rng);
                cin = ch;
            }
            plan.push(Step::Pool { slot: i });
        }
        for i in (0..b).rev() {
            plan.push(Step::Unpool { slot: i });
            let n = config.convs_per_block[i];
            for j in 0..n {
                let cout = if j + 1 < n {
                    c[i]
                } else if i > 0 {
                    c[i - 1]
                } else {
                    c[0]
                };
                push(&mut units, &mut plan, format!("dec{i}.conv{j}"), c[i], cout, &mut rng);
            }
        }
        plan.push(Step::Conv {
            unit: units.len(),
            relu: false,
        });
        units.push(ConvUnit::new("classifier".into(), c[0], NUM_CLASSES, false, &mut rng));
        plan.push(Step::Softmax);
        audit_pool_pairing(&plan, config.working_size())?;
        Ok(Self {
            config: config.clone(),
            units,
            mode: Mode::Infer,
            plan,
        })
    }

    pub fn plan(&self) -> &[Step] {
        &self.plan
    }

    pub fn audit(&self) -> Result<()> {
        audit_pool_pairing(&self.plan, self.config.working_size())
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.units.iter().flat_map(ConvUnit::params).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.units.iter_mut().flat_map(ConvUnit::params_mut).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.clear_grad();
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.nchw()?;
        if c != 1 || (h, w) != self.config.input_size {
            return Err(Error::shape(format!(
                "model expects 1x{}x{} input, got {:?}",
                self.config.input_size.0,
                self.config.input_size.1,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Class probabilities `[2, H, W]` (or `[N, 2, H, W]`) using the stored
    /// batch-norm statistics.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        self.check_input(image)?;
        let mut x = pad_edges(image, self.config.working_size())?;
        let mut indices: Vec<Option<PoolIndices>> = vec![None; self.config.num_blocks()];
        for step in &self.plan {
            x = match *step {
                Step::Conv { unit, relu } => {
                    let u = &self.units[unit];
                    let mut y = tensor::conv2d(&x, &u.weight, &u.bias)?;
                    if let Some(bn) = &u.bn {
                        y = tensor::batchnorm_infer(&y, &bn.gamma, &bn.beta, &bn.stats)?;
                    }
                    if relu {
                        tensor::relu(&y)
                    } else {
                        y
                    }
                }
                Step::Pool { slot } => {
                    let (y, idx) = tensor::maxpool2(&x)?;
                    indices[slot] = Some(idx);
                    y
                }
                Step::Unpool { slot } => {
                    let idx = indices[slot].take().expect("audited plan");
                    let shape = idx.input_shape().to_vec();
                    tensor::maxunpool2(&x, &idx, &shape)?
                }
                Step::Softmax => tensor::pixel_softmax(&x)?,
            };
        }
        let x = crop(&x, self.config.input_size)?;
        x.check_finite("network output")?;
        Ok(x)
    }

    /// Training forward pass on a `[N, 1, H, W]` batch: batch statistics are
    /// used and folded into the running statistics.
    pub(crate) fn forward_train(&mut self, batch: &Tensor) -> Result<(Tensor, Trace)> {
        self.check_input(batch)?;
        let mut x = pad_edges(batch, self.config.working_size())?;
        let mut trace = Trace {
            steps: Vec::with_capacity(self.plan.len()),
            indices: vec![None; self.config.num_blocks()],
        };
        for step in self.plan.clone() {
            let (y, cache) = match step {
                Step::Conv { unit, relu } => {
                    let u = &mut self.units[unit];
                    let mut y = tensor::conv2d(&x, &u.weight, &u.bias)?;
                    let mut bn_cache = None;
                    if let Some(bn) = &mut u.bn {
                        let (z, c) = tensor::batchnorm_train(&y, &bn.gamma, &bn.beta, &mut bn.stats)?;
                        y = z;
                        bn_cache = Some(c);
                    }
                    let out = if relu { tensor::relu(&y) } else { y.clone() };
                    (
                        out,
                        StepCache::Conv {
                            input: std::mem::replace(&mut x, Tensor::zeros(&[0])),
                            bn: bn_cache,
                            pre_relu: y,
                        },
                    )
                }
                Step::Pool { slot } => {
                    let (y, idx) = tensor::maxpool2(&x)?;
                    trace.indices[slot] = Some(idx);
                    (y, StepCache::Pool)
                }
                Step::Unpool { slot } => {
                    let idx = trace.indices[slot].as_ref().expect("audited plan");
                    (tensor::maxunpool2(&x, idx, idx.input_shape())?, StepCache::Unpool)
                }
                Step::Softmax => {
                    let p = tensor::pixel_softmax(&x)?;
                    (p.clone(), StepCache::Softmax { probs: p })
                }
            };
            trace.steps.push(cache);
            x = y;
        }
        Ok((crop(&x, self.config.input_size)?, trace))
    }

    /// Accumulates parameter gradients given the loss gradient with respect
    /// to the output probabilities.
    pub(crate) fn backward(&mut self, trace: Trace, grad_probs: Tensor) -> Result<()> {
        let Trace { steps, indices } = trace;
        let mut g = uncrop(&grad_probs, self.config.working_size())?;
        for (step, cache) in self.plan.clone().into_iter().zip(steps).rev() {
            g = match (step, cache) {
                (Step::Softmax, StepCache::Softmax { probs }) => tensor::pixel_softmax_backward(&probs, &g)?,
                (Step::Unpool { slot }, StepCache::Unpool) => {
                    tensor::maxunpool2_backward(indices[slot].as_ref().expect("recorded"), &g)?
                }
                (Step::Pool { slot }, StepCache::Pool) => {
                    tensor::maxpool2_backward(indices[slot].as_ref().expect("recorded"), &g)?
                }
                (Step::Conv { unit, relu }, StepCache::Conv { input, bn, pre_relu }) => {
                    let u = &mut self.units[unit];
                    let mut gy = if relu { tensor::relu_backward(&pre_relu, &g)? } else { g };
                    if let (Some(bnp), Some(c)) = (&mut u.bn, bn) {
                        let (gx, gg, gb) = tensor::batchnorm_backward(&c, &bnp.gamma, &gy)?;
                        bnp.gamma.accumulate_grad(gg.data())?;
                        bnp.beta.accumulate_grad(gb.data())?;
                        gy = gx;
                    }
                    let grads = tensor::conv2d_backward(&input, &u.weight, &gy)?;
                    u.weight.accumulate_grad(grads.weight.data())?;
                    u.bias.accumulate_grad(grads.bias.data())?;
                    grads.input
                }
                _ => unreachable!("trace recorded from the same plan"),
            };
        }
        Ok(())
    }
}

fn margins(from: (usize, usize), to: (usize, usize)) -> (usize, usize) {
    ((to.0 - from.0) / 2, (to.1 - from.1) / 2)
}

/// Centres `x` in a `size` canvas, replicating its border pixels outward.
fn pad_edges(x: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    let (n, c, h, w) = x.nchw()?;
    if (h, w) == size {
        return Ok(x.clone());
    }
    let (top, left) = margins((h, w), size);
    let (hp, wp) = size;
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * hp * wp);
    for plane in src.chunks_exact(h * w) {
        for y in 0..hp {
            let sy = y.saturating_sub(top).min(h - 1);
            for xx in 0..wp {
                let sx = xx.saturating_sub(left).min(w - 1);
                out.push(plane[sy * w + sx]);
            }
        }
    }
    let shape = if x.shape().len() == 3 { vec![c, hp, wp] } else { vec![n, c, hp, wp] };
    Tensor::new(&shape, out)
}

/// Central `size` window of a padded map.
fn crop(x: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    let (n, c, hp, wp) = x.nchw()?;
    if (hp, wp) == size {
        return Ok(x.clone());
    }
    let (top, left) = margins(size, (hp, wp));
    let (h, w) = size;
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in x.data().chunks_exact(hp * wp) {
        for y in 0..h {
            let row = (y + top) * wp + left;
            out.extend_from_slice(&plane[row..row + w]);
        }
    }
    let shape = if x.shape().len() == 3 { vec![c, h, w] } else { vec![n, c, h, w] };
    Tensor::new(&shape, out)
}

/// Adjoint of [`crop`]: zero outside the window.
fn uncrop(g: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    let (n, c, h, w) = g.nchw()?;
    if (h, w) == size {
        return Ok(g.clone());
    }
    let (top, left) = margins((h, w), size);
    let (hp, wp) = size;
    let mut out = vec![0.0; n * c * hp * wp];
    for (plane, dst) in g.data().chunks_exact(h * w).zip(out.chunks_exact_mut(hp * wp)) {
        for y in 0..h {
            let row = (y + top) * wp + left;
            dst[row..row + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
        }
    }
    let shape = if g.shape().len() == 3 { vec![c, hp, wp] } else { vec![n, c, hp, wp] };
    Tensor::new(&shape, out)
}

/// Grayscale image as a `[1, H, W]` tensor scaled to `[0, 1]`.
pub fn image_to_tensor(image: &GrayImage) -> Tensor {
    let (w, h) = image.dimensions();
    let data = image.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::new(&[1, h as usize, w as usize], data).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic() {
        let a = Model::build(&ModelConfig::mini(), 3).unwrap();
        let b = Model::build(&ModelConfig::mini(), 3).unwrap();
        assert_eq!(a, b);
        let c = Model::build(&ModelConfig::mini(), 4).unwrap();
        assert_ne!(a.units[0].weight, c.units[0].weight);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for cfg in [ModelConfig::mini(), ModelConfig::full()] {
            let m = Model::build(&cfg, 0).unwrap();
            assert_eq!(m.parameter_count(), cfg.expected_parameter_count());
        }
    }

    #[test]
    fn mini_forward_shape_and_normalization() {
        let m = Model::build(&ModelConfig::mini(), 1).unwrap();
        let p = m.forward(&Tensor::zeros(&[1, 32, 40])).unwrap();
        assert_eq!(p.shape(), &[2, 32, 40]);
        let plane = 32 * 40;
        for i in 0..plane {
            let s = p.data()[i] + p.data()[plane + i];
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(matches!(m.forward(&Tensor::zeros(&[1, 32, 32])), Err(Error::Shape(_))));
        assert!(matches!(m.forward(&Tensor::zeros(&[2, 32, 40])), Err(Error::Shape(_))));
    }

    #[test]
    fn infer_forward_is_repeatable() {
        let m = Model::build(&ModelConfig::mini(), 2).unwrap();
        let mut s = Stream::new(8);
        let x = Tensor::new(&[1, 32, 40], (0..1280).map(|_| s.unit() as f32).collect()).unwrap();
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn plan_pairs_each_pool_with_one_unpool() {
        let m = Model::build(&ModelConfig::mini(), 0).unwrap();
        m.audit().unwrap();
        let pools = m.plan().iter().filter(|s| matches!(s, Step::Pool { .. })).count();
        let unpools = m.plan().iter().filter(|s| matches!(s, Step::Unpool { .. })).count();
        assert_eq!((pools, unpools), (3, 3));
    }

    #[test]
    fn audit_rejects_broken_pairings() {
        use Step::*;
        let ok = [Pool { slot: 0 }, Pool { slot: 1 }, Unpool { slot: 1 }, Unpool { slot: 0 }];
        audit_pool_pairing(&ok, (8, 8)).unwrap();
        let crossed = [Pool { slot: 0 }, Pool { slot: 1 }, Unpool { slot: 0 }, Unpool { slot: 1 }];
        assert!(audit_pool_pairing(&crossed, (8, 8)).is_err());
        let dangling = [Pool { slot: 0 }, Pool { slot: 1 }, Unpool { slot: 1 }];
        assert!(audit_pool_pairing(&dangling, (8, 8)).is_err());
        let twice = [Pool { slot: 0 }, Unpool { slot: 0 }, Unpool { slot: 0 }];
        assert!(audit_pool_pairing(&twice, (8, 8)).is_err());
    }

    #[test]
    fn full_preset_runs_on_120x160() {
        let cfg = ModelConfig::full();
        assert_eq!(cfg.working_size(), (128, 160));
        let m = Model::build(&cfg, 0).unwrap();
        let p = m.forward(&Tensor::full(&[1, 120, 160], 0.5)).unwrap();
        assert_eq!(p.shape(), &[2, 120, 160]);
    }

    #[test]
    fn crop_is_adjoint_of_uncrop() {
        let mut s = Stream::new(1);
        let x = Tensor::new(&[2, 1, 6, 8], (0..96).map(|_| s.normal(0.0, 1.0) as f32).collect()).unwrap();
        let g = Tensor::new(&[2, 1, 4, 8], (0..64).map(|_| s.normal(0.0, 1.0) as f32).collect()).unwrap();
        let lhs: f32 = crop(&x, (4, 8)).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.data().iter().zip(uncrop(&g, (6, 8)).unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4);
        let padded = pad_edges(&g, (6, 8)).unwrap();
        assert_eq!(crop(&padded, (4, 8)).unwrap(), g);
        assert_eq!(padded.data()[..8], g.data()[..8]);
    }
}
