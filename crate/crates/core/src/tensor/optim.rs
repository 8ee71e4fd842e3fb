use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdParams {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

/// Momentum buffers, one per trainable parameter, in parameter order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub hyper: SgdParams,
    velocity: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new<'a>(hyper: SgdParams, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            hyper,
            velocity: params.into_iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        sgd_momentum_step(params, self)
    }
}

/// `v ← momentum·v + grad + weight_decay·param`, then `param ← param − lr·v`.
///
/// Gradients are read from each tensor's gradient buffer; a parameter without
/// one is a [`Error::State`].
pub fn sgd_momentum_step(params: &mut [&mut Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != state.velocity.len() {
        return Err(Error::State(format!(
            "{} parameters for {} velocity buffers",
            params.len(),
            state.velocity.len()
        )));
    }
    for (i, (p, v)) in params.iter().zip(&state.velocity).enumerate() {
        if p.grad().is_none() {
            return Err(Error::State(format!("parameter {i} has no gradient")));
        }
        if p.len() != v.len() {
            return Err(Error::State(format!(
                "parameter {i} has {} values but its velocity has {}",
                p.len(),
                v.len()
            )));
        }
    }
    let SgdParams {
        learning_rate: lr,
        momentum,
        weight_decay: wd,
    } = state.hyper;
    for (p, v) in params.iter_mut().zip(&mut state.velocity) {
        let g = p.grad.take().expect("checked above");
        for ((x, vi), gi) in p.data.iter_mut().zip(v.iter_mut()).zip(&g) {
            *vi = momentum * *vi + gi + wd * *x;
            *x -= lr * *vi;
        }
        p.grad = Some(g);
    }
    Ok(())
}
