//! 2x2 stride-2 max pooling with recorded argmax for the backward pass.

use super::{dims4, dims4_of, Element, Tensor};
use crate::error::{Error, Result};

/// Returns the pooled tensor and, per output cell, the flat index into the
/// input buffer of the element that won. Ties go to the earliest element in
/// row-major window order.
pub fn maxpool2_forward<E: Element>(input: &Tensor<E>) -> Result<(Tensor<E>, Vec<u32>)> {
    let (n, c, h, w) = dims4(input, "maxpool input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dimension(format!(
            "maxpool2 needs even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let o = out.data_mut();

    for plane in 0..n * c {
        let base = plane * h * w;
        let obase = plane * oh * ow;
        for y in 0..oh {
            let r0 = base + (2 * y) * w;
            let r1 = r0 + w;
            for xo in 0..ow {
                let idx = [r0 + 2 * xo, r0 + 2 * xo + 1, r1 + 2 * xo, r1 + 2 * xo + 1];
                let mut best = idx[0];
                let mut bv = x[idx[0]];
                for &i in &idx[1..] {
                    if x[i] > bv {
                        bv = x[i];
                        best = i;
                    }
                }
                o[obase + y * ow + xo] = bv;
                arg[obase + y * ow + xo] = best as u32;
            }
        }
    }
    Ok((out, arg))
}

/// Routes each output gradient to the recorded argmax position.
pub fn maxpool2_backward<E: Element>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = dims4_of(input_shape, "maxpool input")?;
    let (gn, gc, oh, ow) = dims4(grad_out, "maxpool grad_out")?;
    if gn != n || gc != c || oh != h / 2 || ow != w / 2 || argmax.len() != grad_out.len() {
        return Err(Error::dimension(format!(
            "maxpool grad_out shape {:?} does not match input {input_shape:?}",
            grad_out.shape()
        )));
    }
    let mut gin = Tensor::zeros(vec![n, c, h, w]);
    let gi = gin.data_mut();
    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
        let i = src as usize;
        gi[i] = gi[i] + g;
    }
    Ok(gin)
}
