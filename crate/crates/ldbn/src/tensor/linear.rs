//! Fully connected layer: `y = x W^T + b` with `x [N,In]`, `W [Out,In]`.

use super::{dot, Element, Tensor};
use crate::error::{Error, Result};

fn dims2<E: Element>(t: &Tensor<E>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[a, b] => Ok((a, b)),
        s => Err(Error::dimension(format!("{what} must be rank 2, got {s:?}"))),
    }
}

pub fn linear_forward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (n, in_f) = dims2(input, "linear input")?;
    let (out_f, w_in) = dims2(weight, "linear weight")?;
    if w_in != in_f {
        return Err(Error::dimension(format!(
            "linear feature mismatch: input has {in_f}, weight expects {w_in}"
        )));
    }
    if bias.shape() != [out_f] {
        return Err(Error::dimension(format!(
            "linear bias shape {:?} does not match output features {out_f}",
            bias.shape()
        )));
    }

    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let mut out = Tensor::zeros(vec![n, out_f]);
    let o = out.data_mut();
    for ni in 0..n {
        let x_row = &x[ni * in_f..(ni + 1) * in_f];
        let o_row = &mut o[ni * out_f..(ni + 1) * out_f];
        for (of, ov) in o_row.iter_mut().enumerate() {
            let w_row = &w[of * in_f..(of + 1) * in_f];
            *ov = dot(x_row, w_row) + b[of];
        }
    }
    Ok(out)
}

/// Gradient w.r.t. the input only: `g W`.
pub fn linear_grad_input<E: Element>(
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (out_f, in_f) = dims2(weight, "linear weight")?;
    let (n, g_out) = dims2(grad_out, "linear grad_out")?;
    if g_out != out_f {
        return Err(Error::dimension(format!(
            "linear grad_out has {g_out} features, weight produces {out_f}"
        )));
    }
    let w = weight.data();
    let g = grad_out.data();
    let mut gin = Tensor::zeros(vec![n, in_f]);
    let gi = gin.data_mut();
    for ni in 0..n {
        let g_row = &g[ni * out_f..(ni + 1) * out_f];
        let gi_row = &mut gi[ni * in_f..(ni + 1) * in_f];
        for (of, gv) in g_row.iter().enumerate() {
            let w_row = &w[of * in_f..(of + 1) * in_f];
            for (iv, wv) in gi_row.iter_mut().zip(w_row) {
                *iv = *iv + *gv * *wv;
            }
        }
    }
    Ok(gin)
}

/// Gradients w.r.t. input, weight, and bias.
pub fn linear_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (n, in_f) = dims2(input, "linear input")?;
    let (out_f, _) = dims2(weight, "linear weight")?;
    let grad_input = linear_grad_input(weight, grad_out)?;

    let x = input.data();
    let g = grad_out.data();
    let mut gw = Tensor::zeros(vec![out_f, in_f]);
    let mut gb = Tensor::zeros(vec![out_f]);
    let gwd = gw.data_mut();
    let gbd = gb.data_mut();
    for ni in 0..n {
        let x_row = &x[ni * in_f..(ni + 1) * in_f];
        let g_row = &g[ni * out_f..(ni + 1) * out_f];
        for (of, gv) in g_row.iter().enumerate() {
            gbd[of] = gbd[of] + *gv;
            let w_row = &mut gwd[of * in_f..(of + 1) * in_f];
            for (wv, xv) in w_row.iter_mut().zip(x_row) {
                *wv = *wv + *gv * *xv;
            }
        }
    }
    Ok((grad_input, gw, gb))
}
