//! Supervised pretraining loss: mean cross-entropy over all (sample,
//! anchor, lane) groups, with the absent class as the target where the
//! label marks no lane.

use super::{LaneLabel, RowAnchorGrid};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Returns the scalar loss and its gradient w.r.t. the logits
/// `[N, cells+1, anchors, lanes]`. The gradient of mean-reduced
/// cross-entropy is `(softmax - onehot) / group_count`.
pub fn pretrain_loss<E: Element>(
    logits: &Tensor<E>,
    labels: &[LaneLabel],
    grid: &RowAnchorGrid,
) -> Result<(E, Tensor<E>)> {
    let (n, k, h, l) = match logits.shape() {
        &[n, k, h, l] => (n, k, h, l),
        s => {
            return Err(Error::dimension(format!(
                "pretrain loss expects [N, cells+1, anchors, lanes], got {s:?}"
            )))
        }
    };
    if k != grid.cells + 1 || h != grid.anchors() || l != grid.lanes {
        return Err(Error::dimension(format!(
            "logit shape {:?} does not match grid ({} cells, {} anchors, {} lanes)",
            logits.shape(),
            grid.cells,
            grid.anchors(),
            grid.lanes
        )));
    }
    if labels.len() != n {
        return Err(Error::dimension(format!(
            "{n} samples with {} labels",
            labels.len()
        )));
    }
    if !logits.all_finite() {
        return Err(Error::numeric("pretrain loss logits contain a non-finite value"));
    }

    let groups = n * h * l;
    let inv_g = E::of(1.0 / groups as f64);
    let z = logits.data();
    let mut grad = Tensor::zeros(logits.shape().to_vec());
    let gd = grad.data_mut();
    let mut loss = E::zero();

    for ni in 0..n {
        for a in 0..h {
            for lane in 0..l {
                let base = ((ni * k) * h + a) * l + lane;
                let t = labels[ni].cells[a * l + lane];
                let target = if t < 0 { grid.absent_class() } else { t as usize };

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
                // -log p_target via log-sum-exp, immune to underflow
                loss = loss + zsum.ln() + m - z[base + target * h * l];
                for c in 0..k {
                    let idx = base + c * h * l;
                    let p = gd[idx] / zsum;
                    let onehot = if c == target { E::one() } else { E::zero() };
                    gd[idx] = (p - onehot) * inv_g;
                }
            }
        }
    }
    Ok((loss * inv_g, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grid() -> RowAnchorGrid {
        RowAnchorGrid::new(100, 10, 4, 1, vec![2, 5]).unwrap()
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        let g = tiny_grid();
        let logits = Tensor::<f64>::zeros(vec![1, 5, 2, 1]);
        let labels = vec![LaneLabel::new(vec![1, -1], &g).unwrap()];
        let (loss, _) = pretrain_loss(&logits, &labels, &g).unwrap();
        assert!((loss - (5.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_logits_cost_tends_to_zero() {
        let g = tiny_grid();
        let mut logits = Tensor::<f64>::zeros(vec![1, 5, 2, 1]);
        logits.data_mut()[2] = 50.0; // class 1 at anchor 0
        logits.data_mut()[4 * 2 + 1] = 50.0; // absent at anchor 1
        let labels = vec![LaneLabel::new(vec![1, -1], &g).unwrap()];
        let (loss, grad) = pretrain_loss(&logits, &labels, &g).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
        assert!(grad.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_sums_to_zero_per_group() {
        let g = tiny_grid();
        let logits = Tensor::<f64>::from_fn(vec![2, 5, 2, 1], |i| (i as f64 * 0.61).sin());
        let labels = vec![
            LaneLabel::new(vec![0, 3], &g).unwrap(),
            LaneLabel::new(vec![-1, -1], &g).unwrap(),
        ];
        let (_, grad) = pretrain_loss(&logits, &labels, &g).unwrap();
        for ni in 0..2 {
            for a in 0..2 {
                let s: f64 = (0..5).map(|c| grad.data()[(ni * 5 + c) * 2 + a]).sum();
                assert!(s.abs() < 1e-15);
            }
        }
    }
}
