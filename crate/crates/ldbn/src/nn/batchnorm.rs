//! Batch normalization over the channel axis of `[N, C, H, W]` tensors.
//!
//! The batch variance is the biased estimator (divide by the element count),
//! and the same biased value feeds the running-statistic EMA in train mode.
//! With batch size 1 the spatial extent still provides `H*W` samples per
//! channel, which is exactly what makes single-frame adaptation viable.

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{dims4, Element, Tensor};

/// Everything the backward pass needs from a batch-statistics forward.
#[derive(Debug, Clone)]
pub struct BnCache<E: Element> {
    /// Normalized input, before scale and shift.
    pub xhat: Tensor<E>,
    /// Per-channel `1 / sqrt(var + eps)`.
    pub inv_std: Vec<E>,
}

/// Forward with statistics of this batch. Returns the output, the backward
/// cache, and the per-channel batch mean and biased variance.
pub fn bn_batch_forward<E: Element>(
    x: &Tensor<E>,
    gamma: &[E],
    beta: &[E],
    eps: E,
) -> Result<(Tensor<E>, BnCache<E>, Vec<E>, Vec<E>)> {
    let (n, c, h, w) = dims4(x, "batchnorm input")?;
    check_params(c, gamma.len(), beta.len())?;
    let count = n * h * w;
    if count < 2 {
        return Err(Error::degenerate_batch(format!(
            "batch statistics need at least 2 values per channel, got N*H*W = {count}"
        )));
    }
    let countf = E::of(count as f64);

    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    let xd = x.data();
    for ni in 0..n {
        for ci in 0..c {
            let plane = &xd[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            let mut s = E::zero();
            for &v in plane {
                s = s + v;
            }
            mean[ci] = mean[ci] + s;
        }
    }
    for m in &mut mean {
        *m = *m / countf;
    }
    for ni in 0..n {
        for ci in 0..c {
            let plane = &xd[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            let m = mean[ci];
            let mut s = E::zero();
            for &v in plane {
                let d = v - m;
                s = s + d * d;
            }
            var[ci] = var[ci] + s;
        }
    }
    for v in &mut var {
        *v = *v / countf;
    }

    let inv_std: Vec<E> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let mut xhat = Tensor::zeros(x.shape().to_vec());
    let mut out = Tensor::zeros(x.shape().to_vec());
    {
        let xh = xhat.data_mut();
        let o = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                let (m, is, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                for i in base..base + h * w {
                    let xh_v = (xd[i] - m) * is;
                    xh[i] = xh_v;
                    o[i] = g * xh_v + b;
                }
            }
        }
    }
    Ok((out, BnCache { xhat, inv_std }, mean, var))
}

/// Forward with stored running statistics; a pure per-element transform.
pub fn bn_inference_forward<E: Element>(
    x: &Tensor<E>,
    gamma: &[E],
    beta: &[E],
    running_mean: &[E],
    running_var: &[E],
    eps: E,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = dims4(x, "batchnorm input")?;
    check_params(c, gamma.len(), beta.len())?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::dimension(format!(
            "running statistics have {} / {} channels, input has {c}",
            running_mean.len(),
            running_var.len()
        )));
    }
    let xd = x.data();
    let mut out = Tensor::zeros(x.shape().to_vec());
    let o = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let is = (running_var[ci] + eps).sqrt().recip();
            let (m, g, b) = (running_mean[ci], gamma[ci], beta[ci]);
            for i in base..base + h * w {
                o[i] = g * (xd[i] - m) * is + b;
            }
        }
    }
    Ok(out)
}

/// Backward through a batch-statistics forward. Returns gradients for the
/// input, gamma, and beta. Per channel, with `m = mean over N*H*W`:
///
/// `grad_x = gamma * inv_std * (g - m(g) - xhat * m(g * xhat))`
pub fn bn_batch_backward<E: Element>(
    cache: &BnCache<E>,
    gamma: &[E],
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, Vec<E>, Vec<E>)> {
    let (n, c, h, w) = dims4(&cache.xhat, "batchnorm cache")?;
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::dimension(format!(
            "batchnorm grad_out shape {:?} does not match forward shape {:?}",
            grad_out.shape(),
            cache.xhat.shape()
        )));
    }
    let count = E::of((n * h * w) as f64);
    let xh = cache.xhat.data();
    let g = grad_out.data();

    let mut grad_beta = vec![E::zero(); c];
    let mut grad_gamma = vec![E::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let (mut sb, mut sg) = (E::zero(), E::zero());
            for i in base..base + h * w {
                sb = sb + g[i];
                sg = sg + g[i] * xh[i];
            }
            grad_beta[ci] = grad_beta[ci] + sb;
            grad_gamma[ci] = grad_gamma[ci] + sg;
        }
    }

    let mut gin = Tensor::zeros(cache.xhat.shape().to_vec());
    let gi = gin.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let scale = gamma[ci] * cache.inv_std[ci];
            let mg = grad_beta[ci] / count;
            let mgx = grad_gamma[ci] / count;
            for i in base..base + h * w {
                gi[i] = scale * (g[i] - mg - xh[i] * mgx);
            }
        }
    }
    Ok((gin, grad_gamma, grad_beta))
}

fn check_params(c: usize, glen: usize, blen: usize) -> Result<()> {
    if glen != c || blen != c {
        return Err(Error::dimension(format!(
            "batchnorm has {glen} gammas / {blen} betas, input has {c} channels"
        )));
    }
    Ok(())
}

/// Stateful BN layer: affine parameters, running statistics, and the cache
/// that links one batch-statistics forward to its backward.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
    /// EMA rate for running statistics in train mode.
    pub momentum: f32,
    cache: Option<BnCache<f32>>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>> {
        match mode {
            Mode::Inference => {
                self.cache = None;
                bn_inference_forward(
                    x,
                    &self.gamma,
                    &self.beta,
                    &self.running_mean,
                    &self.running_var,
                    self.eps,
                )
            }
            Mode::Adapt => {
                let (y, cache, _, _) = bn_batch_forward(x, &self.gamma, &self.beta, self.eps)?;
                self.cache = Some(cache);
                Ok(y)
            }
            Mode::Train => {
                let (y, cache, mean, var) =
                    bn_batch_forward(x, &self.gamma, &self.beta, self.eps)?;
                self.cache = Some(cache);
                let m = self.momentum;
                for c in 0..self.channels() {
                    self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean[c];
                    self.running_var[c] = (1.0 - m) * self.running_var[c] + m * var[c];
                }
                Ok(y)
            }
        }
    }

    /// Backward through the most recent adapt/train forward. The cache is
    /// consumed: a second call without a new forward is a state error.
    pub fn backward(&mut self, grad_out: &Tensor<f32>) -> Result<(Tensor<f32>, Vec<f32>, Vec<f32>)> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::state("batchnorm backward without a preceding adapt/train forward")
        })?;
        bn_batch_backward(&cache, &self.gamma, grad_out)
    }

    /// Overwrites running statistics with the given batch statistics, the
    /// statistic-recomputation half of the adaptation method.
    pub fn set_running(&mut self, mean: Vec<f32>, var: Vec<f32>) -> Result<()> {
        if mean.len() != self.channels() || var.len() != self.channels() {
            return Err(Error::dimension(format!(
                "statistics for {} channels given to a {}-channel layer",
                mean.len(),
                self.channels()
            )));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }
}
