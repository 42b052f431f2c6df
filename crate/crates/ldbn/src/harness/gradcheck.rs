//! Finite-difference verification of every backward kernel.
//!
//! Each kernel runs many seeded trials in the 64-bit instantiation. A trial
//! draws random shapes and values, reduces the kernel output to a scalar
//! through a fixed random weighting, and compares the analytic gradient of
//! every input coordinate against central differences. Kinked kernels get
//! conditioned inputs: ReLU values are nudged off zero and pool windows are
//! respread, so no finite-difference step crosses a non-smooth point.

use crate::error::{Error, Result};
use crate::lane::{pretrain_loss, LaneLabel, RowAnchorGrid};
use crate::nn::{bn_batch_backward, bn_batch_forward};
use crate::tensor::{
    conv2d_backward, conv2d_forward, group_softmax, group_softmax_backward, linear_backward,
    linear_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Max relative error a kernel may show and still pass.
pub const TOLERANCE: f64 = 1e-5;
/// Central-difference step.
const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-3;

pub const KERNELS: [&str; 8] = [
    "conv2d",
    "linear",
    "relu",
    "maxpool2",
    "batchnorm",
    "group_softmax",
    "entropy_loss",
    "pretrain_loss",
];

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub kernel: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub kernels: Vec<KernelReport>,
    pub all_pass: bool,
}

impl GradcheckReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>6} {:>12}  status", "kernel", "trials", "max_rel_err");
        for k in &self.kernels {
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>12.3e}  {}",
                k.kernel,
                k.trials,
                k.max_rel_err,
                if k.pass { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

/// Runs every kernel suite. `fault` multiplies the named kernel's analytic
/// gradients by 1.01, a deliberate corruption that must make exactly that
/// suite fail; it exists so the harness itself can be tested.
pub fn run_gradcheck(seed: u64, trials: usize, fault: Option<&str>) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(Error::validation("gradcheck needs at least one trial"));
    }
    if let Some(f) = fault {
        if !KERNELS.contains(&f) {
            return Err(Error::validation(format!(
                "unknown kernel {f:?}, expected one of {}",
                KERNELS.join(", ")
            )));
        }
    }
    let mut kernels = Vec::with_capacity(KERNELS.len());
    for (ki, &kernel) in KERNELS.iter().enumerate() {
        let mult = if fault == Some(kernel) { 1.01 } else { 1.0 };
        let mut worst = 0.0f64;
        for trial in 0..trials {
            let mut rng = trial_rng(seed, ki as u64, trial as u64);
            let err = match kernel {
                "conv2d" => trial_conv(&mut rng, mult)?,
                "linear" => trial_linear(&mut rng, mult)?,
                "relu" => trial_relu(&mut rng, mult)?,
                "maxpool2" => trial_maxpool(&mut rng, mult)?,
                "batchnorm" => trial_batchnorm(&mut rng, mult)?,
                "group_softmax" => trial_group_softmax(&mut rng, mult)?,
                "entropy_loss" => trial_entropy(&mut rng, mult)?,
                "pretrain_loss" => trial_pretrain_loss(&mut rng, mult)?,
                _ => unreachable!(),
            };
            worst = worst.max(err);
        }
        kernels.push(KernelReport {
            kernel,
            trials,
            max_rel_err: worst,
            pass: worst <= TOLERANCE,
        });
    }
    let all_pass = kernels.iter().all(|k| k.pass);
    Ok(GradcheckReport { kernels, all_pass })
}

fn trial_rng(seed: u64, kernel: u64, trial: u64) -> ChaCha8Rng {
    let mut z = seed
        .wrapping_add(kernel.wrapping_mul(0xA076_1D64_78BD_642F))
        .wrapping_add(trial.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(REL_FLOOR)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| lo + (hi - lo) * rng.gen::<f64>())
}

/// Scalarizer: the kernel output contracted with a fixed random weighting.
fn weighted_sum(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Central-difference gradient of `loss` w.r.t. every coordinate of `x`,
/// compared against `analytic`; returns the worst relative error.
fn fd_max_err(
    x: &mut Tensor<f64>,
    analytic: &[f64],
    mut loss: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<f64> {
    debug_assert_eq!(x.len(), analytic.len());
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let up = loss(x)?;
        x.data_mut()[i] = orig - FD_STEP;
        let down = loss(x)?;
        x.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], fd));
    }
    Ok(worst)
}

fn scaled(t: Tensor<f64>, mult: f64) -> Vec<f64> {
    t.into_data().into_iter().map(|v| v * mult).collect()
}

fn trial_conv(rng: &mut ChaCha8Rng, mult: f64) -> Result<f64> {
    let (n, cin, cout) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let k = if rng.gen::<bool>() { 1 } else { 3 };
    let stride = rng.gen_range(1..3);
    let pad = rng.gen_range(0..=k / 2);
    // Spatial extents built backwards from the output so tiling is exact.
    let (oh, ow) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let h = stride * (oh - 1) + k - 2 * pad;
    let w = stride * (ow - 1) + k - 2 * pad;
    let mut x = rand_tensor(rng, vec![n, cin, h, w], -1.0, 1.0);
    let mut weight = rand_tensor(rng, vec![cout, cin, k, k], -1.0, 1.0);
    let r = rand_tensor(rng, vec![n, cout, oh, ow], -1.0, 1.0);

    let (gin, gw) = conv2d_backward(&x, &weight, &r, stride, pad)?;
    let gin = scaled(gin, mult);
    let gw = scaled(gw, mult);

    let e1 = {
        let weight = weight.clone();
        fd_max_err(&mut x, &gin, |x| {
            Ok(weighted_sum(&conv2d_forward(x, &weight, stride, pad)?, &r))
        })?
    };
    let e2 = {
        let x = x.clone();
        fd_max_err(&mut weight, &gw, |w| {
            Ok(weighted_sum(&conv2d_forward(&x, w, stride, pad)?, &r))
        })?
    };
    Ok(e1.max(e2))
}

fn trial_linear(rng: &mut ChaCha8Rng, mult: f64) -> Result<f64> {
    let (n, in_f, out_f) = (rng.gen_range(1..4), rng.gen_range(2..8), rng.gen_range(1..6));
    let mut x = rand_tensor(rng, vec![n, in_f], -1.0, 1.0);
    let mut weight = rand_tensor(rng, vec![out_f, in_f], -1.0, 1.0);
    let mut bias = rand_tensor(rng, vec![out_f], -1.0, 1.0);
    let r = rand_tensor(rng, vec![n, out_f], -1.0, 1.0);

    let (gin, gw, gb) = linear_backward(&x, &weight, &r)?;
    let (gin, gw, gb) = (scaled(gin, mult), scaled(gw, mult), scaled(gb, mult));

    let e1 = {
        let (weight, bias) = (weight.clone(), bias.clone());
        fd_max_err(&mut x, &gin, |x| {
            Ok(weighted_sum(&linear_forward(x, &weight, &bias)?, &r))
        })?
    };
    let e2 = {
        let (x, bias) = (x.clone(), bias.clone());
        fd_max_err(&mut weight, &gw, |w| {
            Ok(weighted_sum(&linear_forward(&x, w, &bias)?, &r))
        })?
    };
    let e3 = {
        let (x, weight) = (x.clone(), weight.clone());
        fd_max_err(&mut bias, &gb, |b| {
            Ok(weighted_sum(&linear_forward(&x, &weight, b)?, &r))
        })?
    };
    Ok(e1.max(e2).max(e3))
}

fn trial_relu(rng: &mut ChaCha8Rng, mult: f64) -> Result<f64> {
    let shape = vec![rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(2..5)];
    let mut x = rand_tensor(rng, shape.clone(), -1.0, 1.0);
    // Keep every input at least 0.01 from the kink at zero.
    for v in x.data_mut() {
        if v.abs() < 0.01 {
            *v = 0.01 * if *v < 0.0 { -1.0 } else { 1.0 };
        }
    }
    let r = rand_tensor(rng, shape, -1.0, 1.0);
    let gin = scaled(relu_backward(&x, &r), mult);
    fd_max_err(&mut x, &gin, |x| Ok(weighted_sum(&relu_forward(x), &r)))
}

fn trial_maxpool(rng: &mut ChaCha8Rng, mult: f64) -> Result<f64> {
    let (n, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
    let (h, w) = (2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4));
    let mut x = rand_tensor(rng, vec![n, c, h, w], -1.0, 1.0);
    respread_pool_windows(&mut x, n, c, h, w);
    let r = rand_tensor(rng, vec![n, c, h / 2, w / 2], -1.0, 1.0);

    let (_, argmax) = maxpool2_forward(&x)?;
    let gin = scaled(maxpool2_backward(x.shape(), &argmax, &r)?, mult);
    fd_max_err(&mut x, &gin, |x| Ok(weighted_sum(&maxpool2_forward(x)?.0, &r)))
}

/// Forces every 2x2 window to have pairwise gaps of at least 1e-3 so the
/// argmax cannot flip inside a finite-difference step.
fn respread_pool_windows(x: &mut Tensor<f64>, n: usize, c: usize, h: usize, w: usize) {
    let data = x.data_mut();
    for img in 0..n * c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let idx = [
                    img * h * w + (2 * oy) * w + 2 * ox,
                    img * h * w + (2 * oy) * w + 2 * ox + 1,
                    img * h * w + (2 * oy + 1) * w + 2 * ox,
                    img * h * w + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut order: Vec<usize> = (0..4).collect();
                order.sort_by(|&a, &b| data[idx[a]].partial_cmp(&data[idx[b]]).unwrap());
                let tight = order
                    .windows(2)
                    .any(|p| data[idx[p[1]]] - data[idx[p[0]]] < 1e-3);
                if tight {
                    let base = data[idx[order[0]]];
                    for (rank, &slot) in order.iter().enumerate() {
                        data[idx[slot]] = base + rank as f64 * 0.05;
                    }
                }
            }
        }
    }
}

fn trial_batchnorm(rng: &mut ChaCha8Rng, mult: f64) -> Result<f64> {
    let (n, c) = (rng.gen_range(2..4), rng.gen_range(1..4));
    let (h, w) = (rng.gen_range(2..4), rng.gen_range(2..4));
    let mut x = rand_tensor(rng, vec![n, c, h, w], -1.0, 1.0);
    let mut gamma = rand_tensor(rng, vec![c], 0.5, 1.5);
    let mut beta = rand_tensor(rng, vec![c], -0.5, 0.5);
    let r = rand_tensor(rng, vec![n, c, h, w], -1.0, 1.0);
    let eps = 1e-5;

    let loss = |x: &Tensor<f64>, g: &[f64], b: &[f64]| -> Result<f64> {
        Ok(weighted_sum(&bn_batch_forward(x, g, b, eps)?.0, &r))
    };

    let (_, cache, _, _) = bn_batch_forward(&x, gamma.data(), beta.data(), eps)?;
    let (gin, gg, gb) = bn_batch_backward(&cache, gamma.data(), &r)?;
    let gin = scaled(gin, mult);
    let gg: Vec<f64> = gg.into_iter().map(|v| v * mult).collect();
    let gb: Vec<f64> = gb.into_iter().map(|v| v * mult).collect();

    let e1 = {
        let (g, b) = (gamma.clone(), beta.clone());
        fd_max_err(&mut x, &gin, |x| loss(x, g.data(), b.data()))?
    };
    let e2 = {
        let (x2, b) = (x.clone(), beta.clone());
        fd_max_err(&mut gamma, &gg, |g| loss(&x2, g.data(), b.data()))?
    };
    let e3 = {
        let (x2, g) = (x.clone(), gamma.clone());
        fd_max_err(&mut beta, &gb, |b| loss(&x2, g.data(), b.data()))?
    };
    Ok(e1.max(e2).max(e3))
}

fn trial_group_softmax(rng: &mut ChaCha8Rng, mult: f64) -> Result<f64> {
    let shape = vec![
        rng.gen_range(1..3),
        rng.gen_range(3..6),
        rng.gen_range(1..3),
        rng.gen_range(1..3),
    ];
    let mut x = rand_tensor(rng, shape.clone(), -2.0, 2.0);
    let r = rand_tensor(rng, shape, -1.0, 1.0);
    let probs = group_softmax(&x, 1)?;
    let gin = scaled(group_softmax_backward(&probs, &r, 1)?, mult);
    fd_max_err(&mut x, &gin, |x| Ok(weighted_sum(&group_softmax(x, 1)?, &r)))
}

fn trial_entropy(rng: &mut ChaCha8Rng, mult: f64) -> Result<f64> {
    let shape = vec![
        rng.gen_range(1..3),
        rng.gen_range(3..6),
        rng.gen_range(1..3),
        rng.gen_range(1..3),
    ];
    let mut x = rand_tensor(rng, shape, -2.0, 2.0);
    let (_, grad) = crate::adapt::entropy_loss(&x)?;
    let grad = scaled(grad, mult);
    fd_max_err(&mut x, &grad, |x| Ok(crate::adapt::entropy_loss(x)?.0))
}

fn trial_pretrain_loss(rng: &mut ChaCha8Rng, mult: f64) -> Result<f64> {
    let lanes = rng.gen_range(1..3);
    let anchors = rng.gen_range(1..4);
    let cells = rng.gen_range(2..5);
    let grid = RowAnchorGrid::new(100, 20, cells, lanes, (1..=anchors).collect())?;
    let n = rng.gen_range(1..3);
    let mut x = rand_tensor(rng, vec![n, cells + 1, anchors, lanes], -2.0, 2.0);
    let labels: Vec<LaneLabel> = (0..n)
        .map(|_| {
            let cells_vec: Vec<i16> = (0..anchors * lanes)
                .map(|_| rng.gen_range(-1..cells as i16))
                .collect();
            LaneLabel::new(cells_vec, &grid)
        })
        .collect::<Result<_>>()?;
    let (_, grad) = pretrain_loss(&x, &labels, &grid)?;
    let grad = scaled(grad, mult);
    fd_max_err(&mut x, &grad, |x| Ok(pretrain_loss(x, &labels, &grid)?.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_small_run_passes_every_kernel() {
        let report = run_gradcheck(7, 5, None).unwrap();
        assert!(report.all_pass, "{}", report.table());
        assert_eq!(report.kernels.len(), KERNELS.len());
        for k in &report.kernels {
            assert!(k.max_rel_err <= TOLERANCE, "{}: {}", k.kernel, k.max_rel_err);
        }
    }

    #[test]
    fn same_seed_gives_identical_error_tables() {
        let a = run_gradcheck(3, 3, None).unwrap();
        let b = run_gradcheck(3, 3, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn injected_fault_fails_exactly_that_kernel() {
        let report = run_gradcheck(7, 3, Some("batchnorm")).unwrap();
        assert!(!report.all_pass);
        for k in &report.kernels {
            assert_eq!(k.pass, k.kernel != "batchnorm", "{}", k.kernel);
        }
    }

    #[test]
    fn unknown_fault_kernel_is_rejected() {
        assert!(run_gradcheck(1, 1, Some("attention")).is_err());
    }
}
