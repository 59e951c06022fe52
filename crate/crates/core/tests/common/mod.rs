//! Reference implementations shared by the integration tests and the
//! acceptance run.
#![allow(dead_code)]

use confoundnet::pose::Quaternion;
use confoundnet::tensor::{LayerParams, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

/// Uniform on SO(3): a normalized 4-D Gaussian.
pub fn random_unit(rng: &mut impl Rng) -> Quaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        if let Ok(q) = Quaternion::new(v[0], v[1], v[2], v[3]).normalize() {
            return q;
        }
    }
}

/// Direct six-loop convolution (cross-correlation) with zero padding.
pub fn naive_conv(x: &Tensor, p: &LayerParams, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [k, _, kh, kw] = [p.weights.shape()[0], p.weights.shape()[1], p.weights.shape()[2], p.weights.shape()[3]];
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * k * oh * ow];
    for b in 0..n {
        for f in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = p.bias.data[f];
                    for ch in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data[((b * c + ch) * h + iy as usize) * w + ix as usize];
                                let wv = p.weights.data[((f * c + ch) * kh + dy) * kw + dx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * k + f) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// A random conv instance whose geometry tiles exactly.
pub fn random_conv_case(rng: &mut impl Rng) -> (Tensor, LayerParams, usize, usize) {
    let n = rng.random_range(1..=3);
    let c = rng.random_range(1..=4);
    let k = rng.random_range(1..=5);
    let kernel = rng.random_range(1..=5);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=kernel / 2);
    let out = rng.random_range(1..=6);
    let size = (out - 1) * stride + kernel - 2 * pad;
    let x = Tensor::randn(&[n, c, size, size], 1.0, rng);
    let mut p = LayerParams::gaussian(&[k, c, kernel, kernel], k, 1.0, rng);
    p.bias = Tensor::randn(&[k], 1.0, rng);
    (x, p, stride, pad)
}

/// `-Σ_i log(exp(x_{i,y_i}) / Σ_j exp(x_ij))`, evaluated literally.
pub fn direct_logloss(logits: &Tensor, labels: &[usize]) -> f64 {
    let c = logits.shape()[1];
    logits
        .data
        .chunks(c)
        .zip(labels)
        .map(|(row, &y)| -(row[y].exp() / row.iter().map(|v| v.exp()).sum::<f64>()).ln())
        .sum()
}
