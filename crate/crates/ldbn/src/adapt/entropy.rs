//! Shannon entropy of the prediction distribution, the unsupervised signal
//! that drives adaptation: confident (peaked) outputs score low, uncertain
//! (flat) outputs score high. Natural logarithm throughout.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `p ln p` with the limit value 0 at `p = 0`.
#[inline]
fn plnp<E: Element>(p: E) -> E {
    if p > E::zero() {
        p * p.ln()
    } else {
        E::zero()
    }
}

/// Mean entropy over all (sample, anchor, lane) groups of rank-4 logits
/// with classes on axis 1, plus its gradient w.r.t. the logits.
///
/// Per group with probabilities `p` and entropy `H = -sum p ln p`, the
/// gradient through the softmax is `-(p ln p + p * H) / groups`.
pub fn entropy_loss<E: Element>(logits: &Tensor<E>) -> Result<(E, Tensor<E>)> {
    let (n, k, h, l) = match logits.shape() {
        &[n, k, h, l] => (n, k, h, l),
        s => {
            return Err(Error::dimension(format!(
                "entropy loss expects [N, classes, anchors, lanes], got {s:?}"
            )))
        }
    };
    if !logits.all_finite() {
        return Err(Error::numeric("entropy loss logits contain a non-finite value"));
    }

    let groups = n * h * l;
    let inv_g = E::of(1.0 / groups as f64);
    let z = logits.data();
    let mut grad = Tensor::zeros(logits.shape().to_vec());
    let gd = grad.data_mut();
    let mut total = E::zero();

    for ni in 0..n {
        for a in 0..h {
            for lane in 0..l {
                let base = ((ni * k) * h + a) * l + lane;
                let mut m = z[base];
                for c in 1..k {
                    let v = z[base + c * h * l];
                    if v > m {
                        m = v;
                    }
                }
                let mut zsum = E::zero();
                for c in 0..k {
                    let e = (z[base + c * h * l] - m).exp();
                    gd[base + c * h * l] = e;
                    zsum = zsum + e;
                }
                let mut hg = E::zero();
                for c in 0..k {
                    let idx = base + c * h * l;
                    let p = gd[idx] / zsum;
                    gd[idx] = p;
                    hg = hg - plnp(p);
                }
                total = total + hg;
                for c in 0..k {
                    let idx = base + c * h * l;
                    let p = gd[idx];
                    gd[idx] = -(plnp(p) + p * hg) * inv_g;
                }
            }
        }
    }
    Ok((total * inv_g, grad))
}
