use super::{LayerParams, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FcCtx {
    input: Vec<f64>,
    batch: usize,
    in_features: usize,
    input_shape: Vec<usize>,
}

/// `y = W·x + b` per example. Any input shape `N × …` is flattened to
/// `N × in_features`; weights are `out_features × in_features`.
pub fn fc_forward(input: &Tensor, params: &LayerParams) -> Result<(Tensor, FcCtx)> {
    let &[out_f, in_f] = params.weights.shape() else {
        return Err(Error::Dimension(format!(
            "fc weights must be 2-D, got {:?}",
            params.weights.shape()
        )));
    };
    let batch = input.shape()[0];
    if input.len() != batch * in_f {
        return Err(Error::Dimension(format!(
            "fc input {:?} does not flatten to {in_f} features",
            input.shape()
        )));
    }
    if params.bias.len() != out_f {
        return Err(Error::Dimension(format!(
            "bias length {} for {out_f} outputs",
            params.bias.len()
        )));
    }
    let mut out = Tensor::zeros(&[batch, out_f]);
    for b in 0..batch {
        let x = &input.data[b * in_f..(b + 1) * in_f];
        let y = &mut out.data[b * out_f..(b + 1) * out_f];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &params.weights.data[o * in_f..(o + 1) * in_f];
            *yo = params.bias.data[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }
    out.check_finite("fc_forward")?;
    Ok((
        out,
        FcCtx {
            input: input.data.clone(),
            batch,
            in_features: in_f,
            input_shape: input.shape().to_vec(),
        },
    ))
}

/// Accumulates into `params` gradients and returns the input gradient,
/// shaped like the forward input.
pub fn fc_backward(ctx: &FcCtx, params: &mut LayerParams, grad_out: &Tensor) -> Result<Tensor> {
    let out_f = params.weights.shape()[0];
    let in_f = ctx.in_features;
    if grad_out.shape() != [ctx.batch, out_f] {
        return Err(Error::Dimension(format!(
            "fc grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [ctx.batch, out_f]
        )));
    }
    let mut grad_in = Tensor::zeros(&ctx.input_shape);
    for b in 0..ctx.batch {
        let x = &ctx.input[b * in_f..(b + 1) * in_f];
        let dy = &grad_out.data[b * out_f..(b + 1) * out_f];
        let dx = &mut grad_in.data[b * in_f..(b + 1) * in_f];
        for (o, &g) in dy.iter().enumerate() {
            params.bias.grad[o] += g;
            let wg = &mut params.weights.grad[o * in_f..(o + 1) * in_f];
            for (w, &xi) in wg.iter_mut().zip(x) {
                *w += g * xi;
            }
            let row = &params.weights.data[o * in_f..(o + 1) * in_f];
            for (d, &w) in dx.iter_mut().zip(row) {
                *d += g * w;
            }
        }
    }
    params.weights.check_finite("fc_backward")?;
    params.bias.check_finite("fc_backward")?;
    grad_in.check_finite("fc_backward")?;
    Ok(grad_in)
}
