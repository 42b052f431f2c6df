//! The row-anchor grid: where the detector looks and how cell indices map
//! to image coordinates.

use crate::error::{Error, Result};

/// Geometry of the row-anchor head. Each of `anchors` image rows is divided
/// into `cells` horizontal bins; per (row, lane) the network scores every
/// bin plus one extra "absent" class, so logits carry `cells + 1` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowAnchorGrid {
    pub width: usize,
    pub height: usize,
    pub cells: usize,
    pub lanes: usize,
    /// Image row of each anchor, strictly increasing.
    pub anchor_rows: Vec<usize>,
}

impl RowAnchorGrid {
    pub fn new(
        width: usize,
        height: usize,
        cells: usize,
        lanes: usize,
        anchor_rows: Vec<usize>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || cells == 0 || lanes == 0 || anchor_rows.is_empty() {
            return Err(Error::validation("grid extents must all be positive"));
        }
        if !anchor_rows.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::validation(format!(
                "anchor rows must be strictly increasing, got {anchor_rows:?}"
            )));
        }
        if *anchor_rows.last().unwrap() >= height {
            return Err(Error::validation(format!(
                "anchor row {} lies outside image height {height}",
                anchor_rows.last().unwrap()
            )));
        }
        Ok(Self {
            width,
            height,
            cells,
            lanes,
            anchor_rows,
        })
    }

    /// The grid every shipped model uses: 128x64 images, 25 cells, 2 lanes,
    /// 14 anchor rows spread evenly over the road half of the image
    /// (rows 26 through 63).
    pub fn reference() -> Self {
        let anchor_rows = (0..14)
            .map(|i| 26 + ((i * 37) as f64 / 13.0).round() as usize)
            .collect();
        Self::new(128, 64, 25, 2, anchor_rows).expect("reference grid is valid")
    }

    pub fn anchors(&self) -> usize {
        self.anchor_rows.len()
    }

    /// Index of the "no lane here" class in a logit group.
    pub fn absent_class(&self) -> usize {
        self.cells
    }

    /// Cell containing horizontal position `x`, clamped to the valid range.
    pub fn cell_of_x(&self, x: f32) -> usize {
        let c = (x / self.width as f32 * self.cells as f32).floor();
        (c.max(0.0) as usize).min(self.cells - 1)
    }

    /// Horizontal center of a cell.
    pub fn x_of_cell(&self, cell: usize) -> f32 {
        (cell as f32 + 0.5) / self.cells as f32 * self.width as f32
    }
}
