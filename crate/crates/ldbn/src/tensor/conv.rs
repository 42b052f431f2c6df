//! 2D cross-correlation, forward and backward.
//!
//! No bias term: every conv in the reference model is followed by a BN layer
//! whose shift subsumes it. Loops are ordered so the innermost dimension
//! walks contiguous memory in both the input and the output, which is what
//! keeps the streaming loop on budget on one core.

use super::{dims4, dims4_of, dot, Element, Tensor};
use crate::error::{Error, Result};

/// Output spatial extents for the given geometry. Errors unless the stride
/// divides evenly, so every output cell maps onto a full window.
pub fn conv2d_output_hw(
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    if k % 2 == 0 {
        return Err(Error::dimension(format!("kernel size {k} must be odd")));
    }
    if stride == 0 {
        return Err(Error::dimension("stride must be positive"));
    }
    let span_h = (h + 2 * pad).checked_sub(k);
    let span_w = (w + 2 * pad).checked_sub(k);
    match (span_h, span_w) {
        (Some(sh), Some(sw)) if sh % stride == 0 && sw % stride == 0 => {
            Ok((sh / stride + 1, sw / stride + 1))
        }
        _ => Err(Error::dimension(format!(
            "conv geometry h={h} w={w} k={k} stride={stride} pad={pad} does not tile"
        ))),
    }
}

/// `input [N,Cin,H,W] ⊛ weight [Cout,Cin,k,k] -> [N,Cout,H',W']`.
pub fn conv2d_forward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let (n, cin, h, w) = dims4(input, "conv2d input")?;
    let (cout, wcin, kh, kw) = dims4(weight, "conv2d weight")?;
    if wcin != cin {
        return Err(Error::dimension(format!(
            "conv2d channel mismatch: input has {cin}, weight expects {wcin}"
        )));
    }
    if kh != kw {
        return Err(Error::dimension(format!(
            "conv2d kernel must be square, got {kh}x{kw}"
        )));
    }
    let k = kh;
    let (oh, ow) = conv2d_output_hw(h, w, k, stride, pad)?;

    let mut out = Tensor::zeros(vec![n, cout, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let o = out.data_mut();

    for ni in 0..n {
        for co in 0..cout {
            let o_plane = &mut o[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
            for ci in 0..cin {
                let x_plane = &x[(ni * cin + ci) * h * w..(ni * cin + ci + 1) * h * w];
                let w_block = &wt[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                for dy in 0..k {
                    for dx in 0..k {
                        let wv = w_block[dy * k + dx];
                        accumulate_shifted(
                            o_plane, x_plane, wv, oh, ow, h, w, stride, pad, dy, dx,
                        );
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Valid output index range for one kernel tap. For stride 1 the bounds are
/// y-independent, which keeps integer division out of the row loops.
struct TapBounds {
    ylo: usize,
    yhi: usize,
    xlo: usize,
    xhi: usize,
}

#[inline]
fn tap_bounds_s1(oh: usize, ow: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> TapBounds {
    TapBounds {
        ylo: pad.saturating_sub(dy),
        yhi: (h + pad).saturating_sub(dy).min(oh),
        xlo: pad.saturating_sub(dx),
        xhi: (w + pad).saturating_sub(dx).min(ow),
    }
}

/// out[y, x] += wv * in[y*stride + dy - pad, x*stride + dx - pad] over the
/// valid range; the inner loop is a contiguous axpy when stride == 1.
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_shifted<E: Element>(
    out: &mut [E],
    inp: &[E],
    wv: E,
    oh: usize,
    ow: usize,
    h: usize,
    w: usize,
    stride: usize,
    pad: usize,
    dy: usize,
    dx: usize,
) {
    if stride == 1 {
        let b = tap_bounds_s1(oh, ow, h, w, pad, dy, dx);
        if b.xlo >= b.xhi {
            return;
        }
        for y in b.ylo..b.yhi {
            let iy = y + dy - pad;
            let src = &inp[iy * w + b.xlo + dx - pad..iy * w + b.xhi + dx - pad];
            let dst = &mut out[y * ow + b.xlo..y * ow + b.xhi];
            for (ov, iv) in dst.iter_mut().zip(src) {
                *ov = *ov + wv * *iv;
            }
        }
        return;
    }
    for y in 0..oh {
        let iy = (y * stride + dy) as isize - pad as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let in_row = &inp[iy as usize * w..(iy as usize + 1) * w];
        let out_row = &mut out[y * ow..(y + 1) * ow];
        // valid x range: 0 <= x*stride + dx - pad < w
        let lo = pad.saturating_sub(dx).div_ceil(stride).min(ow);
        let hi = (w + pad).saturating_sub(dx).div_ceil(stride).min(ow);
        for x in lo..hi {
            let ix = x * stride + dx - pad;
            out_row[x] = out_row[x] + wv * in_row[ix];
        }
    }
}

/// Gradient of a scalar loss w.r.t. the conv input only — the cheap path the
/// BN-only backward uses for frozen conv layers.
pub fn conv2d_grad_input<E: Element>(
    input_shape: &[usize],
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let (n, cin, h, w) = dims4_of(input_shape, "conv2d input")?;
    let (cout, _, k, _) = dims4(weight, "conv2d weight")?;
    let (gn, gco, oh, ow) = dims4(grad_out, "conv2d grad_out")?;
    let (eh, ew) = conv2d_output_hw(h, w, k, stride, pad)?;
    if gn != n || gco != cout || oh != eh || ow != ew {
        return Err(Error::dimension(format!(
            "conv2d grad_out shape {:?} does not match expected [{n},{cout},{eh},{ew}]",
            grad_out.shape()
        )));
    }

    let mut gin = Tensor::zeros(vec![n, cin, h, w]);
    let g = grad_out.data();
    let wt = weight.data();
    let gi = gin.data_mut();

    // grad_in[iy, ix] += w[dy, dx] * grad_out[y, x] where iy = y*stride+dy-pad.
    for ni in 0..n {
        for ci in 0..cin {
            let gi_plane = &mut gi[(ni * cin + ci) * h * w..(ni * cin + ci + 1) * h * w];
            for co in 0..cout {
                let g_plane = &g[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
                let w_block = &wt[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                for dy in 0..k {
                    for dx in 0..k {
                        let wv = w_block[dy * k + dx];
                        scatter_shifted(gi_plane, g_plane, wv, oh, ow, h, w, stride, pad, dy, dx);
                    }
                }
            }
        }
    }
    Ok(gin)
}

/// grad_in[y*stride + dy - pad, x*stride + dx - pad] += wv * g[y, x]; the
/// mirror of `accumulate_shifted` with source and destination swapped.
#[allow(clippy::too_many_arguments)]
#[inline]
fn scatter_shifted<E: Element>(
    gin: &mut [E],
    g: &[E],
    wv: E,
    oh: usize,
    ow: usize,
    h: usize,
    w: usize,
    stride: usize,
    pad: usize,
    dy: usize,
    dx: usize,
) {
    if stride == 1 {
        let b = tap_bounds_s1(oh, ow, h, w, pad, dy, dx);
        if b.xlo >= b.xhi {
            return;
        }
        for y in b.ylo..b.yhi {
            let iy = y + dy - pad;
            let dst = &mut gin[iy * w + b.xlo + dx - pad..iy * w + b.xhi + dx - pad];
            let src = &g[y * ow + b.xlo..y * ow + b.xhi];
            for (iv, gv) in dst.iter_mut().zip(src) {
                *iv = *iv + wv * *gv;
            }
        }
        return;
    }
    for y in 0..oh {
        let iy = (y * stride + dy) as isize - pad as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let gin_row = &mut gin[iy as usize * w..(iy as usize + 1) * w];
        let g_row = &g[y * ow..(y + 1) * ow];
        let lo = pad.saturating_sub(dx).div_ceil(stride).min(ow);
        let hi = (w + pad).saturating_sub(dx).div_ceil(stride).min(ow);
        for x in lo..hi {
            let ix = x * stride + dx - pad;
            gin_row[ix] = gin_row[ix] + wv * g_row[x];
        }
    }
}

/// Gradients of a scalar loss w.r.t. both the conv input and the weight.
pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let grad_input = conv2d_grad_input(input.shape(), weight, grad_out, stride, pad)?;
    let grad_weight = conv2d_grad_weight(input, weight, grad_out, stride, pad)?;
    Ok((grad_input, grad_weight))
}

/// Gradient of a scalar loss w.r.t. the conv weight only.
pub fn conv2d_grad_weight<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let (n, cin, h, w) = dims4(input, "conv2d input")?;
    let (cout, _, k, _) = dims4(weight, "conv2d weight")?;
    let (gn, gco, oh, ow) = dims4(grad_out, "conv2d grad_out")?;
    let (eh, ew) = conv2d_output_hw(h, w, k, stride, pad)?;
    if gn != n || gco != cout || oh != eh || ow != ew {
        return Err(Error::dimension(format!(
            "conv2d grad_out shape {:?} does not match expected [{n},{cout},{eh},{ew}]",
            grad_out.shape()
        )));
    }

    let mut gw = Tensor::zeros(vec![cout, cin, k, k]);
    let x = input.data();
    let g = grad_out.data();
    let gwd = gw.data_mut();

    // grad_w[dy, dx] = sum over n, y, x of g[y, x] * in[y*stride+dy-pad, ...]:
    // a dot product of two contiguous rows when stride == 1.
    for co in 0..cout {
        for ci in 0..cin {
            let w_block = &mut gwd[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
            for ni in 0..n {
                let x_plane = &x[(ni * cin + ci) * h * w..(ni * cin + ci + 1) * h * w];
                let g_plane = &g[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow];
                for dy in 0..k {
                    for dx in 0..k {
                        let mut acc = E::zero();
                        if stride == 1 {
                            let b = tap_bounds_s1(oh, ow, h, w, pad, dy, dx);
                            if b.xlo >= b.xhi {
                                continue;
                            }
                            if b.xlo == 0 && b.xhi == ow && ow == w {
                                // full-width taps line up across rows, so the
                                // whole y range collapses into one long dot
                                let iy = b.ylo + dy - pad;
                                acc = dot(
                                    &g_plane[b.ylo * ow..b.yhi * ow],
                                    &x_plane[iy * w..(iy + b.yhi - b.ylo) * w],
                                );
                            } else {
                                for y in b.ylo..b.yhi {
                                    let iy = y + dy - pad;
                                    acc = acc
                                        + dot(
                                            &g_plane[y * ow + b.xlo..y * ow + b.xhi],
                                            &x_plane[iy * w + b.xlo + dx - pad
                                                ..iy * w + b.xhi + dx - pad],
                                        );
                                }
                            }
                        } else {
                            for y in 0..oh {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let in_row = &x_plane[iy as usize * w..(iy as usize + 1) * w];
                                let g_row = &g_plane[y * ow..(y + 1) * ow];
                                let lo = pad.saturating_sub(dx).div_ceil(stride).min(ow);
                                let hi = (w + pad).saturating_sub(dx).div_ceil(stride).min(ow);
                                for xo in lo..hi {
                                    let ix = xo * stride + dx - pad;
                                    acc = acc + g_row[xo] * in_row[ix];
                                }
                            }
                        }
                        w_block[dy * k + dx] = w_block[dy * k + dx] + acc;
                    }
                }
            }
        }
    }
    Ok(gw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_3x3_sums_to_nine() {
        let input = Tensor::<f32>::full(vec![1, 1, 3, 3], 1.0);
        let weight = Tensor::<f32>::full(vec![1, 1, 3, 3], 1.0);
        let out = conv2d_forward(&input, &weight, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn identity_kernel_with_pad_copies_input() {
        let input = Tensor::<f32>::from_fn(vec![1, 1, 4, 5], |i| i as f32 * 0.5 - 3.0);
        let mut kernel = Tensor::<f32>::zeros(vec![1, 1, 3, 3]);
        kernel.data_mut()[4] = 1.0; // center tap
        let out = conv2d_forward(&input, &kernel, 1, 1).unwrap();
        assert_eq!(out.shape(), input.shape());
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn channel_mismatch_names_axes() {
        let input = Tensor::<f32>::zeros(vec![1, 2, 4, 4]);
        let weight = Tensor::<f32>::zeros(vec![1, 3, 3, 3]);
        let err = conv2d_forward(&input, &weight, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("input has 2") && msg.contains("expects 3"), "{msg}");
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(conv2d_output_hw(4, 4, 2, 1, 0).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let input = Tensor::<f32>::from_fn(vec![1, 2, 4, 4], |i| i as f32);
        let weight = Tensor::<f32>::from_fn(vec![3, 2, 3, 3], |i| i as f32 * 0.1);
        let grad_out = Tensor::<f32>::zeros(vec![1, 3, 4, 4]);
        let (gin, gw) = conv2d_backward(&input, &weight, &grad_out, 1, 1).unwrap();
        assert!(gin.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_tap_kernel_grad_weight_is_window_sum() {
        let input = Tensor::<f32>::from_fn(vec![1, 1, 3, 3], |i| (i + 1) as f32);
        let weight = Tensor::<f32>::full(vec![1, 1, 1, 1], 2.0);
        let grad_out = Tensor::<f32>::full(vec![1, 1, 3, 3], 1.0);
        let (_, gw) = conv2d_backward(&input, &weight, &grad_out, 1, 0).unwrap();
        assert_eq!(gw.data()[0], 45.0); // 1 + 2 + ... + 9
    }
}
