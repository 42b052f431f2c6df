//! Softmax along one axis of a dense tensor, with the usual max-subtraction
//! so large logits cannot overflow the exponential.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Softmax over `axis`; every other axis indexes an independent group.
/// Non-finite inputs are rejected rather than silently propagated.
pub fn group_softmax<E: Element>(logits: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    let shape = logits.shape();
    if axis >= shape.len() {
        return Err(Error::dimension(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    if !logits.all_finite() {
        return Err(Error::numeric("softmax input contains a non-finite value"));
    }
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();

    let x = logits.data();
    let mut out = Tensor::zeros(shape.to_vec());
    let o = out.data_mut();

    for g_outer in 0..outer {
        for g_inner in 0..inner {
            let base = g_outer * k * inner + g_inner;
            let mut m = x[base];
            for i in 1..k {
                let v = x[base + i * inner];
                if v > m {
                    m = v;
                }
            }
            let mut z = E::zero();
            for i in 0..k {
                let e = (x[base + i * inner] - m).exp();
                o[base + i * inner] = e;
                z = z + e;
            }
            for i in 0..k {
                o[base + i * inner] = o[base + i * inner] / z;
            }
        }
    }
    Ok(out)
}

/// Backward of softmax given its own output `p` and the upstream gradient:
/// `grad_in = p * (g - sum(g * p))` per group.
pub fn group_softmax_backward<E: Element>(
    probs: &Tensor<E>,
    grad_out: &Tensor<E>,
    axis: usize,
) -> Result<Tensor<E>> {
    let shape = probs.shape();
    if shape != grad_out.shape() {
        return Err(Error::dimension(format!(
            "softmax backward shape mismatch: {:?} vs {:?}",
            shape,
            grad_out.shape()
        )));
    }
    if axis >= shape.len() {
        return Err(Error::dimension(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();

    let p = probs.data();
    let g = grad_out.data();
    let mut gin = Tensor::zeros(shape.to_vec());
    let gi = gin.data_mut();

    for g_outer in 0..outer {
        for g_inner in 0..inner {
            let base = g_outer * k * inner + g_inner;
            let mut dot = E::zero();
            for i in 0..k {
                dot = dot + g[base + i * inner] * p[base + i * inner];
            }
            for i in 0..k {
                let idx = base + i * inner;
                gi[idx] = p[idx] * (g[idx] - dot);
            }
        }
    }
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let x = Tensor::<f32>::zeros(vec![26]);
        let p = group_softmax(&x, 0).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 26.0).abs() < 1e-7);
        }
    }

    #[test]
    fn huge_logit_saturates_without_overflow() {
        let x = Tensor::<f32>::new(vec![3], vec![1000.0, 0.0, 0.0]).unwrap();
        let p = group_softmax(&x, 0).unwrap();
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(p.data()[1], 0.0);
        assert_eq!(p.data()[2], 0.0);
    }

    #[test]
    fn nan_input_is_a_numeric_error() {
        let x = Tensor::<f32>::new(vec![2], vec![f32::NAN, 0.0]).unwrap();
        assert!(group_softmax(&x, 0).is_err());
    }

    #[test]
    fn mid_axis_groups_sum_to_one() {
        let x = Tensor::<f32>::from_fn(vec![2, 5, 3], |i| (i as f32 * 0.37).sin() * 4.0);
        let p = group_softmax(&x, 1).unwrap();
        for n in 0..2 {
            for j in 0..3 {
                let s: f32 = (0..5).map(|c| p.data()[n * 15 + c * 3 + j]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn backward_of_constant_upstream_is_zero() {
        // sum over a softmax is constant 1, so its gradient must vanish.
        let x = Tensor::<f64>::from_fn(vec![4], |i| i as f64 * 0.3);
        let p = group_softmax(&x, 0).unwrap();
        let g = Tensor::<f64>::full(vec![4], 1.0);
        let gin = group_softmax_backward(&p, &g, 0).unwrap();
        for &v in gin.data() {
            assert!(v.abs() < 1e-15);
        }
    }
}
