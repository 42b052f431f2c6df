//! Shared helpers for the integration suites: independent nested-loop
//! reference kernels and small fixtures. The references trade all speed for
//! obviousness; they are the oracle the fast paths are judged against.

// Each integration target compiles this module separately and uses a subset.
#![allow(dead_code)]

use ldbn::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| lo + (hi - lo) * rng.gen::<f32>())
}

/// Direct definition of padded strided cross-correlation: five nested loops,
/// bounds checked per tap, no slicing tricks.
pub fn naive_conv2d(
    input: &Tensor<f32>,
    weight: &Tensor<f32>,
    stride: usize,
    pad: usize,
) -> Tensor<f32> {
    let (n, cin, h, w) = shape4(input);
    let (cout, _, k, _) = shape4(weight);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..cin {
                        for dy in 0..k {
                            for dx in 0..k {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((ni * cin + ci) * h + iy as usize) * w + ix as usize;
                                let wi = ((co * cin + ci) * k + dy) * k + dx;
                                acc += x[xi] * wt[wi];
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

/// y[n, o] = sum_i x[n, i] * w[o, i] + b[o], written as the definition.
pub fn naive_linear(input: &Tensor<f32>, weight: &Tensor<f32>, bias: &Tensor<f32>) -> Tensor<f32> {
    let (n, in_f) = (input.dim(0), input.dim(1));
    let out_f = weight.dim(0);
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = vec![0.0f32; n * out_f];
    for ni in 0..n {
        for o in 0..out_f {
            let mut acc = b[o];
            for i in 0..in_f {
                acc += x[ni * in_f + i] * wt[o * in_f + i];
            }
            out[ni * out_f + o] = acc;
        }
    }
    Tensor::new(vec![n, out_f], out).unwrap()
}

pub fn shape4(t: &Tensor<f32>) -> (usize, usize, usize, usize) {
    assert_eq!(t.shape().len(), 4);
    (t.dim(0), t.dim(1), t.dim(2), t.dim(3))
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

pub fn max_rel_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-3))
        .fold(0.0, f32::max)
}
