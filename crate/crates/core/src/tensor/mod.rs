//! Dense `f64` tensors and the hand-written forward/backward kernels the
//! network is assembled from.
//!
//! Every kernel is a pair of free functions: a forward pass returning the
//! output together with whatever context the backward pass needs, and a
//! backward pass that *accumulates* into gradient buffers. Gradient buffers
//! are only cleared by an explicit [`Tensor::zero_grad`].

mod activation;
mod conv;
mod linear;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward, ReluCtx};
pub use conv::{conv2d_backward, conv2d_forward, ConvCtx};
pub use linear::{fc_backward, fc_forward, FcCtx};
pub use loss::{softmax_logloss, LogLoss};
pub use pool::{maxpool2_backward, maxpool2_forward, PoolCtx};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("zero-sized dimension in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            grad: vec![0.0; len],
            data,
        };
        t.check_finite("tensor construction")?;
        Ok(t)
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

    /// Reinterpret the same data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().chain(&self.grad).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// Fill with draws from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut t = Tensor::zeros(shape);
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut t.data {
            *v = normal.sample(rng);
        }
        t
    }

    /// Copy of rows `start..end` along the leading axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor> {
        let n = *self
            .shape
            .first()
            .ok_or_else(|| Error::Dimension("scalar tensor has no batch axis".into()))?;
        if start >= end || end > n {
            return Err(Error::Dimension(format!("batch range {start}..{end} of {n}")));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            data: self.data[start * per..end * per].to_vec(),
            grad: vec![0.0; (end - start) * per],
            shape,
        })
    }
}

/// Learnable weights and bias of one layer plus their momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub weight_velocity: Vec<f64>,
    pub bias_velocity: Vec<f64>,
}

impl LayerParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Self {
        LayerParams {
            weight_velocity: vec![0.0; weights.len()],
            bias_velocity: vec![0.0; bias.len()],
            weights,
            bias,
        }
    }

    /// Gaussian weights with the given std, zero bias, zero velocity.
    pub fn gaussian<R: Rng + ?Sized>(
        weight_shape: &[usize],
        bias_len: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Self::new(Tensor::randn(weight_shape, std, rng), Tensor::zeros(&[bias_len]))
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn zero_grad(&mut self) {
        self.weights.zero_grad();
        self.bias.zero_grad();
    }

    /// Add another layer's gradient buffers into this one.
    pub fn accumulate_grad(&mut self, other: &LayerParams) {
        for (g, o) in self.weights.grad.iter_mut().zip(&other.weights.grad) {
            *g += o;
        }
        for (g, o) in self.bias.grad.iter_mut().zip(&other.bias.grad) {
            *g += o;
        }
    }
}
