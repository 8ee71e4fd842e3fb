//! Dense f32 tensors and the differentiable kernels the segmentation network
//! is built from.
//!
//! Every kernel comes as a forward function plus an explicit backward
//! function that maps the gradient of the output to gradients of the inputs.
//! Spatial kernels take `[C, H, W]` or batched `[N, C, H, W]` tensors; the
//! batch axis is treated as independent images except in batch
//! normalization, whose statistics span `N × H × W`.

mod ops;
mod optim;

pub use ops::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, conv2d, conv2d_backward,
    cross_entropy_loss, maxpool2, maxpool2_backward, maxunpool2, maxunpool2_backward,
    pixel_softmax, pixel_softmax_backward, relu, relu_backward, BatchNormCache, Conv2dGrads,
    PoolIndices, RunningStats, BN_EPSILON, BN_MOMENTUM, LOG_FLOOR,
};
pub use optim::{sgd_momentum_step, OptimizerState, SgdParams};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Row-major f32 array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(&[1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of length {} for tensor of shape {:?}",
                delta.len(),
                self.shape
            )));
        }
        let g = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in g.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Fails with [`Error::NonFinite`] if any value or gradient is NaN/Inf.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        let bad = self.data.iter().any(|v| !v.is_finite())
            || self
                .grad
                .as_ref()
                .is_some_and(|g| g.iter().any(|v| !v.is_finite()));
        if bad {
            return Err(Error::NonFinite {
                what: what.to_string(),
            });
        }
        Ok(())
    }

    /// Splits the shape into `(n, c, h, w)`, accepting rank 3 as `n = 1`.
    pub(crate) fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((1, c, h, w)),
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected [C,H,W] or [N,C,H,W], got {:?}",
                self.shape
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn check_finite_catches_nan_in_grad() {
        let mut t = Tensor::zeros(&[2]);
        t.check_finite("t").unwrap();
        t.set_grad(vec![0.0, f32::NAN]).unwrap();
        assert!(matches!(t.check_finite("t"), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn accumulate_grad_sums() {
        let mut t = Tensor::zeros(&[3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
    }
}
