use super::Tensor;
use crate::error::{Error, Result};

/// Positive-input mask saved by [`relu_forward`].
#[derive(Debug, Clone)]
pub struct ReluCtx {
    shape: Vec<usize>,
    active: Vec<bool>,
}

impl ReluCtx {
    pub fn mask(&self) -> &[bool] {
        &self.active
    }
}

pub fn relu_forward(input: &Tensor) -> Result<(Tensor, ReluCtx)> {
    input.check_finite("relu_forward")?;
    let active: Vec<bool> = input.data.iter().map(|&x| x > 0.0).collect();
    let data = input
        .data
        .iter()
        .zip(&active)
        .map(|(&x, &a)| if a { x } else { 0.0 })
        .collect();
    let out = Tensor::from_vec(input.shape(), data)?;
    Ok((
        out,
        ReluCtx {
            shape: input.shape().to_vec(),
            active,
        },
    ))
}

/// Passes gradient only where the forward input was strictly positive.
pub fn relu_backward(ctx: &ReluCtx, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != ctx.shape.as_slice() {
        return Err(Error::Dimension(format!(
            "relu grad_out {:?}, expected {:?}",
            grad_out.shape(),
            ctx.shape
        )));
    }
    let data = grad_out
        .data
        .iter()
        .zip(&ctx.active)
        .map(|(&g, &a)| if a { g } else { 0.0 })
        .collect();
    Tensor::from_vec(&ctx.shape, data)
}
