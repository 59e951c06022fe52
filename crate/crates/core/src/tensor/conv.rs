use super::{LayerParams, Tensor};
use crate::error::{Error, Result};

/// Saved state from [`conv2d_forward`].
#[derive(Debug, Clone)]
pub struct ConvCtx {
    input_shape: [usize; 4],
    kernel: [usize; 2],
    out_hw: [usize; 2],
    stride: usize,
    pad: usize,
    /// im2col matrices, one `(C·kh·kw) × (H'·W')` block per example.
    cols: Vec<f64>,
}

/// `c[m×n] = a[m×k]·b[k×n] + beta·c`, with explicit strides for a and b.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices covering every index addressed by the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = size + 2 * pad;
    if padded < k {
        return Err(Error::Geometry(format!(
            "kernel {k} larger than padded input {padded}"
        )));
    }
    if (padded - k) % stride != 0 {
        return Err(Error::Geometry(format!(
            "input {size} with pad {pad}, kernel {k}, stride {stride} gives a fractional output size"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// 2-D cross-correlation with bias over an NCHW batch.
///
/// Weights are `K × C × kh × kw`, bias has length `K`.
pub fn conv2d_forward(
    input: &Tensor,
    params: &LayerParams,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, ConvCtx)> {
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::Dimension(format!(
            "conv input must be NCHW, got {:?}",
            input.shape()
        )));
    };
    let &[k, wc, kh, kw] = params.weights.shape() else {
        return Err(Error::Dimension(format!(
            "conv weights must be KCHW, got {:?}",
            params.weights.shape()
        )));
    };
    if wc != c {
        return Err(Error::Dimension(format!(
            "input has {c} channels, weights expect {wc}"
        )));
    }
    if params.bias.len() != k {
        return Err(Error::Dimension(format!(
            "bias length {} for {k} filters",
            params.bias.len()
        )));
    }
    if stride == 0 {
        return Err(Error::Geometry("stride must be positive".into()));
    }
    let oh = out_extent(h, kh, stride, pad)?;
    let ow = out_extent(w, kw, stride, pad)?;

    let rows = c * kh * kw;
    let cols_per = rows * oh * ow;
    let mut cols = vec![0.0; n * cols_per];
    let mut out = Tensor::zeros(&[n, k, oh, ow]);
    let plane = oh * ow;

    for b in 0..n {
        let img = &input.data[b * c * h * w..(b + 1) * c * h * w];
        let col = &mut cols[b * cols_per..(b + 1) * cols_per];
        im2col(img, [c, h, w], [kh, kw], [oh, ow], stride, pad, col);

        let dst = &mut out.data[b * k * plane..(b + 1) * k * plane];
        for (f, row) in dst.chunks_mut(plane).enumerate() {
            row.fill(params.bias.data[f]);
        }
        gemm(
            k,
            rows,
            plane,
            &params.weights.data,
            (rows, 1),
            col,
            (plane, 1),
            1.0,
            dst,
        );
    }
    out.check_finite("conv2d_forward")?;
    let ctx = ConvCtx {
        input_shape: [n, c, h, w],
        kernel: [kh, kw],
        out_hw: [oh, ow],
        stride,
        pad,
        cols,
    };
    Ok((out, ctx))
}

/// Accumulates weight and bias gradients into `params` and returns the
/// gradient with respect to the forward input.
pub fn conv2d_backward(ctx: &ConvCtx, params: &mut LayerParams, grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = ctx.input_shape;
    let [kh, kw] = ctx.kernel;
    let [oh, ow] = ctx.out_hw;
    let k = params.weights.shape()[0];
    if grad_out.shape() != [n, k, oh, ow] {
        return Err(Error::Dimension(format!(
            "conv grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [n, k, oh, ow]
        )));
    }
    let rows = c * kh * kw;
    let plane = oh * ow;
    let cols_per = rows * plane;
    let mut grad_in = Tensor::zeros(&[n, c, h, w]);
    let mut dcols = vec![0.0; cols_per];

    for b in 0..n {
        let dy = &grad_out.data[b * k * plane..(b + 1) * k * plane];
        let col = &ctx.cols[b * cols_per..(b + 1) * cols_per];
        // dW += dY · colsᵀ
        gemm(
            k,
            plane,
            rows,
            dy,
            (plane, 1),
            col,
            (1, plane),
            1.0,
            &mut params.weights.grad,
        );
        for (f, row) in dy.chunks(plane).enumerate() {
            params.bias.grad[f] += row.iter().sum::<f64>();
        }
        // dcols = Wᵀ · dY
        gemm(
            rows,
            k,
            plane,
            &params.weights.data,
            (1, rows),
            dy,
            (plane, 1),
            0.0,
            &mut dcols,
        );
        let dimg = &mut grad_in.data[b * c * h * w..(b + 1) * c * h * w];
        col2im(&dcols, [c, h, w], [kh, kw], [oh, ow], ctx.stride, ctx.pad, dimg);
    }
    params.weights.check_finite("conv2d_backward")?;
    params.bias.check_finite("conv2d_backward")?;
    grad_in.check_finite("conv2d_backward")?;
    Ok(grad_in)
}

fn im2col(
    img: &[f64],
    [c, h, w]: [usize; 3],
    [kh, kw]: [usize; 2],
    [oh, ow]: [usize; 2],
    stride: usize,
    pad: usize,
    col: &mut [f64],
) {
    let plane = oh * ow;
    for ch in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ch * kh + i) * kw + j) * plane;
                for oy in 0..oh {
                    let y = (oy * stride + i) as isize - pad as isize;
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if y < 0 || y >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &img[(ch * h + y as usize) * w..(ch * h + y as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let x = (ox * stride + j) as isize - pad as isize;
                        *d = if x < 0 || x >= w as isize { 0.0 } else { src[x as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(
    col: &[f64],
    [c, h, w]: [usize; 3],
    [kh, kw]: [usize; 2],
    [oh, ow]: [usize; 2],
    stride: usize,
    pad: usize,
    img: &mut [f64],
) {
    let plane = oh * ow;
    for ch in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ch * kh + i) * kw + j) * plane;
                for oy in 0..oh {
                    let y = (oy * stride + i) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let base = (ch * h + y as usize) * w;
                    for ox in 0..ow {
                        let x = (ox * stride + j) as isize - pad as isize;
                        if x >= 0 && x < w as isize {
                            img[base + x as usize] += col[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_layer(w: f64, b: f64) -> LayerParams {
        LayerParams::new(
            Tensor::from_vec(&[1, 1, 1, 1], vec![w]).unwrap(),
            Tensor::from_vec(&[1], vec![b]).unwrap(),
        )
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = LayerParams::gaussian(&[2, 1, 3, 3], 2, 1.0, &mut rng);
        params.bias.data = vec![0.25, -1.5];
        let input = Tensor::zeros(&[1, 1, 3, 3]);
        let (out, _) = conv2d_forward(&input, &params, 1, 1).unwrap();
        assert_eq!(out.shape(), &[1, 2, 3, 3]);
        assert!(out.data[..9].iter().all(|&v| v == 0.25));
        assert!(out.data[9..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn scalar_forward_and_backward() {
        let mut params = scalar_layer(3.0, 1.0);
        let input = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let (out, ctx) = conv2d_forward(&input, &params, 1, 0).unwrap();
        assert_eq!(out.data, vec![7.0]);
        let g = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let dx = conv2d_backward(&ctx, &mut params, &g).unwrap();
        assert_eq!(params.weights.grad, vec![2.0]);
        assert_eq!(params.bias.grad, vec![1.0]);
        assert_eq!(dx.data, vec![3.0]);
    }

    #[test]
    fn zero_grad_out_accumulates_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = LayerParams::gaussian(&[3, 2, 3, 3], 3, 1.0, &mut rng);
        let input = Tensor::randn(&[2, 2, 5, 5], 1.0, &mut rng);
        let (out, ctx) = conv2d_forward(&input, &params, 1, 1).unwrap();
        let dx = conv2d_backward(&ctx, &mut params, &Tensor::zeros(out.shape())).unwrap();
        assert!(dx.data.iter().all(|&v| v == 0.0));
        assert!(params.weights.grad.iter().all(|&v| v == 0.0));
        assert!(params.bias.grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_accumulate_across_calls() {
        let mut params = scalar_layer(3.0, 1.0);
        let input = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        for _ in 0..2 {
            let (_, ctx) = conv2d_forward(&input, &params, 1, 0).unwrap();
            conv2d_backward(&ctx, &mut params, &g).unwrap();
        }
        assert_eq!(params.weights.grad, vec![4.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = LayerParams::gaussian(&[1, 2, 3, 3], 1, 1.0, &mut rng);
        let wrong_channels = Tensor::zeros(&[1, 3, 5, 5]);
        assert!(matches!(
            conv2d_forward(&wrong_channels, &params, 1, 0),
            Err(Error::Dimension(_))
        ));
        let input = Tensor::zeros(&[1, 2, 6, 6]);
        assert!(matches!(
            conv2d_forward(&input, &params, 2, 0),
            Err(Error::Geometry(_))
        ));
        let (out, ctx) = conv2d_forward(&input, &params, 1, 0).unwrap();
        let mut params = params;
        let bad = Tensor::zeros(&[1, 1, 3, 3]);
        assert_ne!(out.shape(), bad.shape());
        assert!(conv2d_backward(&ctx, &mut params, &bad).is_err());
    }
}
