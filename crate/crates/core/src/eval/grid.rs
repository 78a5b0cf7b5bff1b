//! 3×3 position grid over an image and the mask-to-cells quantizer.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_COVERAGE: f64 = 0.10;

const LABELS: [&str; 9] = [
    "top left",
    "top",
    "top right",
    "left",
    "center",
    "right",
    "bottom left",
    "bottom",
    "bottom right",
];

/// One of the nine grid regions; `id = 3·row + col`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct GridCell(u8);

impl GridCell {
    pub fn new(id: u8) -> Result<Self> {
        if id < 9 {
            Ok(GridCell(id))
        } else {
            Err(Error::Input(format!("grid cell id {id} outside 0..=8")))
        }
    }

    pub fn from_row_col(row: usize, col: usize) -> Result<Self> {
        if row >= 3 || col >= 3 {
            return Err(Error::Input(format!("grid position ({row}, {col}) outside 3×3")));
        }
        Ok(GridCell((3 * row + col) as u8))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn row(self) -> usize {
        self.0 as usize / 3
    }

    pub fn col(self) -> usize {
        self.0 as usize % 3
    }

    pub fn label(self) -> &'static str {
        LABELS[self.0 as usize]
    }

    pub fn all() -> impl Iterator<Item = GridCell> {
        (0..9).map(GridCell)
    }
}

impl TryFrom<u8> for GridCell {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        GridCell::new(v)
    }
}

impl From<GridCell> for u8 {
    fn from(c: GridCell) -> u8 {
        c.0
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Index of the grid band containing pixel `p` along an axis of length `n`.
/// Band `k` spans `[⌊k·n/3⌋, ⌊(k+1)·n/3⌋)`.
fn band(p: usize, n: usize) -> usize {
    (0..3).rev().find(|&k| p >= k * n / 3).unwrap_or(0)
}

/// Cells holding at least `coverage` of the total mask area, in ascending id
/// order. If none qualifies, the cell containing the mask centroid.
pub fn position_cells(gt_mask: &Tensor, coverage: f64) -> Result<Vec<GridCell>> {
    let (h, w) = gt_mask.dims2("position_cells")?;
    let mut counts = [0usize; 9];
    let (mut total, mut sum_r, mut sum_c) = (0usize, 0.0, 0.0);
    for (i, &v) in gt_mask.data().iter().enumerate() {
        if v > 0.5 {
            let (r, c) = (i / w, i % w);
            counts[3 * band(r, h) + band(c, w)] += 1;
            total += 1;
            sum_r += r as f64;
            sum_c += c as f64;
        }
    }
    if total == 0 {
        return Err(Error::Input("empty mask has no position".into()));
    }
    let cells: Vec<GridCell> = GridCell::all()
        .filter(|c| counts[c.0 as usize] as f64 >= coverage * total as f64)
        .collect();
    if !cells.is_empty() {
        return Ok(cells);
    }
    let (cr, cc) = (sum_r / total as f64, sum_c / total as f64);
    GridCell::from_row_col(band(cr.floor() as usize, h), band(cc.floor() as usize, w)).map(|c| vec![c])
}
