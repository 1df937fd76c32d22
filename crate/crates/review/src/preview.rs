//! Block-mean downsampling of TIL maps for display.

use serde::{Deserialize, Serialize};
use til_core::tilmap::TilMap;

/// A coarse raster in row-major order. Each value summarizes a
/// `block × block` square of map cells (smaller at the right and bottom
/// edges).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewGrid {
    pub n_cols: u32,
    pub n_rows: u32,
    pub block: u32,
    pub values: Vec<f64>,
}

/// Smallest block size whose preview fits in `max_cells`.
pub fn block_size(n_cols: u32, n_rows: u32, max_cells: u64) -> u32 {
    let max_cells = max_cells.max(1);
    // ceil(c/k)·ceil(r/k) ≥ c·r/k², so the answer is at least this.
    let lower = ((n_cols as f64 * n_rows as f64) / max_cells as f64).sqrt().floor() as u32;
    let mut k = lower.max(1);
    while n_cols.div_ceil(k) as u64 * n_rows.div_ceil(k) as u64 > max_cells {
        k += 1;
    }
    k
}

/// Averages `value(i)` over unmasked cells in each block. Blocks with no
/// tissue are 0.
fn block_reduce(map: &TilMap, block: u32, value: impl Fn(usize) -> f64) -> PreviewGrid {
    let (cols, rows) = (map.n_cols, map.n_rows);
    let (pc, pr) = (cols.div_ceil(block), rows.div_ceil(block));
    let mut sum = vec![0.0; (pc * pr) as usize];
    let mut count = vec![0u32; (pc * pr) as usize];
    let mask = map.mask();
    for y in 0..rows {
        let row_base = (y / block * pc) as usize;
        for x in 0..cols {
            let i = (y * cols + x) as usize;
            if mask[i] {
                continue;
            }
            let b = row_base + (x / block) as usize;
            sum[b] += value(i);
            count[b] += 1;
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    PreviewGrid {
        n_cols: pc,
        n_rows: pr,
        block,
        values,
    }
}

pub fn probability_preview(map: &TilMap, max_cells: u64) -> PreviewGrid {
    let block = block_size(map.n_cols, map.n_rows, max_cells);
    let probs = map.probs();
    block_reduce(map, block, |i| probs[i])
}

/// Fraction of positive tissue cells per block at threshold `t`.
pub fn threshold_preview(map: &TilMap, t: f64, max_cells: u64) -> PreviewGrid {
    let block = block_size(map.n_cols, map.n_rows, max_cells);
    let probs = map.probs();
    block_reduce(map, block, |i| if probs[i] >= t { 1.0 } else { 0.0 })
}
