use super::Tensor;
use crate::error::{Error, Result};

/// Argmax positions saved by [`maxpool2_forward`]; one flat input index per
/// output element.
#[derive(Debug, Clone)]
pub struct PoolCtx {
    input_shape: [usize; 4],
    argmax: Vec<usize>,
}

impl PoolCtx {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2×2 max pooling with stride 2. Ties go to the first position in
/// row-major scan order.
pub fn maxpool2_forward(input: &Tensor) -> Result<(Tensor, PoolCtx)> {
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::Dimension(format!(
            "maxpool input must be NCHW, got {:?}",
            input.shape()
        )));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Geometry(format!(
            "maxpool2 needs even spatial dims, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0; n * c * oh * ow];
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if input.data[idx] > input.data[best] {
                        best = idx;
                    }
                }
                out.data[o] = input.data[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    out.check_finite("maxpool2_forward")?;
    Ok((
        out,
        PoolCtx {
            input_shape: [n, c, h, w],
            argmax,
        },
    ))
}

pub fn maxpool2_backward(ctx: &PoolCtx, grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = ctx.input_shape;
    if grad_out.shape() != [n, c, h / 2, w / 2] {
        return Err(Error::Dimension(format!(
            "maxpool grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [n, c, h / 2, w / 2]
        )));
    }
    let mut grad_in = Tensor::zeros(&[n, c, h, w]);
    for (&idx, &g) in ctx.argmax.iter().zip(&grad_out.data) {
        grad_in.data[idx] += g;
    }
    Ok(grad_in)
}
