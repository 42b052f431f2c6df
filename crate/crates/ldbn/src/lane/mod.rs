//! Row-anchor lane representation: grids, labels, decoding and accuracy.

mod grid;
mod loss;

pub use grid::RowAnchorGrid;
pub use loss::pretrain_loss;

use crate::error::{Error, Result};
use crate::tensor::{group_softmax, Tensor};

/// Ground-truth cell per (anchor, lane), row-major `[anchors, lanes]`.
/// `-1` marks a lane absent at that row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneLabel {
    pub cells: Vec<i16>,
}

impl LaneLabel {
    pub fn new(cells: Vec<i16>, grid: &RowAnchorGrid) -> Result<Self> {
        if cells.len() != grid.anchors() * grid.lanes {
            return Err(Error::validation(format!(
                "label carries {} cells, grid needs {}",
                cells.len(),
                grid.anchors() * grid.lanes
            )));
        }
        if let Some(&bad) = cells
            .iter()
            .find(|&&c| c < -1 || c >= grid.cells as i16)
        {
            return Err(Error::validation(format!(
                "label cell {bad} outside [-1, {})",
                grid.cells
            )));
        }
        Ok(Self { cells })
    }

    pub fn cell(&self, anchor: usize, lane: usize, grid: &RowAnchorGrid) -> i16 {
        self.cells[anchor * grid.lanes + lane]
    }
}

/// Decoded output for one frame: the winning cell per (anchor, lane) with
/// `-1` for absent, plus the image-space points of present detections.
#[derive(Debug, Clone)]
pub struct LanePrediction {
    pub cells: Vec<i16>,
    /// `(x, y)` per (anchor, lane); `None` where the lane is absent.
    pub points: Vec<Option<(f32, f32)>>,
}

/// Decodes raw logits `[N, cells+1, anchors, lanes]` into per-frame
/// predictions. Per (anchor, lane) group the winning class is the argmax;
/// ties resolve to the lowest index, so a tie between a cell and the absent
/// class keeps the cell.
pub fn decode(logits: &Tensor<f32>, grid: &RowAnchorGrid) -> Result<Vec<LanePrediction>> {
    let (n, k, h, l) = match logits.shape() {
        &[n, k, h, l] => (n, k, h, l),
        s => {
            return Err(Error::dimension(format!(
                "decode expects [N, cells+1, anchors, lanes], got {s:?}"
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
    let d = logits.data();
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let mut cells = Vec::with_capacity(h * l);
        let mut points = Vec::with_capacity(h * l);
        for a in 0..h {
            for lane in 0..l {
                let base = ((ni * k) * h + a) * l + lane;
                let mut best = 0usize;
                let mut bv = d[base];
                for c in 1..k {
                    let v = d[base + c * h * l];
                    if v > bv {
                        bv = v;
                        best = c;
                    }
                }
                if best == grid.absent_class() {
                    cells.push(-1);
                    points.push(None);
                } else {
                    cells.push(best as i16);
                    points.push(Some((grid.x_of_cell(best), grid.anchor_rows[a] as f32)));
                }
            }
        }
        out.push(LanePrediction { cells, points });
    }
    Ok(out)
}

/// Fraction of (anchor, lane) slots predicted correctly. Absent-absent is a
/// hit; present predictions count when within one cell of the label.
pub fn accuracy(pred: &LanePrediction, label: &LaneLabel) -> Result<f64> {
    if pred.cells.len() != label.cells.len() {
        return Err(Error::dimension(format!(
            "prediction has {} slots, label has {}",
            pred.cells.len(),
            label.cells.len()
        )));
    }
    let hits = pred
        .cells
        .iter()
        .zip(&label.cells)
        .filter(|&(&p, &t)| {
            if p < 0 || t < 0 {
                p == t
            } else {
                (p - t).abs() <= 1
            }
        })
        .count();
    Ok(hits as f64 / pred.cells.len() as f64)
}

/// Mean accuracy of a batch of logits against its labels.
pub fn batch_accuracy(
    logits: &Tensor<f32>,
    labels: &[LaneLabel],
    grid: &RowAnchorGrid,
) -> Result<f64> {
    let preds = decode(logits, grid)?;
    if preds.len() != labels.len() {
        return Err(Error::dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(labels) {
        sum += accuracy(p, t)?;
    }
    Ok(sum / labels.len() as f64)
}

/// Per-group probabilities for rank-4 logits, classes on axis 1.
pub fn lane_softmax(logits: &Tensor<f32>) -> Result<Tensor<f32>> {
    group_softmax(logits, 1)
}
