//! Cascaded fusion of per-block visualization maps: add the running map to
//! the next deeper one, then keep only what the deeper map's Otsu mask
//! marks as active.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sampling::VisualizationMap;

pub const OTSU_BINS: usize = 256;

/// Final saliency map, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMap {
    pub grid: Grid,
    pub class_id: usize,
    /// Names of the layers fused into this map, shallow to deep.
    pub provenance: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub grid: Grid,
    pub threshold: f64,
}

/// Relative margin below which two between-class variances count as equal.
const TIE: f64 = 1e-12;

/// Bin of `v` in a `OTSU_BINS`-bin histogram over `[lo, hi]`. Monotone
/// non-decreasing in `v`.
#[inline]
fn bin_of(v: f64, lo: f64, span: f64) -> usize {
    (((v - lo) / span * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Otsu's threshold over a 256-bin histogram spanning the map's own range.
///
/// Among cut points between bins the one with the largest between-class
/// variance wins (lowest cut on ties). The returned threshold is the smallest
/// map value in the upper class, so `v >= threshold` reproduces the split
/// exactly. A constant map returns its value.
pub fn otsu_threshold(map: &Grid) -> f64 {
    let (lo, hi) = (map.min(), map.max());
    if !(hi > lo) {
        return lo;
    }
    let span = hi - lo;
    let mut count = [0usize; OTSU_BINS];
    let mut mass = [0.0f64; OTSU_BINS];
    for &v in map.as_slice() {
        let b = bin_of(v, lo, span);
        count[b] += 1;
        mass[b] += v;
    }
    let total_n = map.len() as f64;
    let total_mass: f64 = mass.iter().sum();

    let mut best_cut = 1;
    // variances are non-negative, so any valid cut beats the start value
    let mut best_var = -1.0;
    let (mut n0, mut m0) = (0.0, 0.0);
    for cut in 1..OTSU_BINS {
        n0 += count[cut - 1] as f64;
        m0 += mass[cut - 1];
        let n1 = total_n - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let diff = m0 / n0 - (total_mass - m0) / n1;
        let var = (n0 / total_n) * (n1 / total_n) * diff * diff;
        // rounding must not break an exact tie in favour of a later cut
        if var > best_var + TIE * best_var {
            best_var = var;
            best_cut = cut;
        }
    }
    map.as_slice()
        .iter()
        .copied()
        .filter(|&v| bin_of(v, lo, span) >= best_cut)
        .fold(f64::INFINITY, f64::min)
}

pub fn otsu_binarize(map: &Grid) -> BinaryMask {
    let threshold = otsu_threshold(map);
    BinaryMask {
        grid: map.map(|v| if v >= threshold { 1.0 } else { 0.0 }),
        threshold,
    }
}

/// `(prev + next) * otsu(next)`, tagged with `next`'s layer.
pub fn fusion_block(prev: &VisualizationMap, next: &VisualizationMap) -> Result<VisualizationMap> {
    if !prev.grid.same_dims(&next.grid) {
        return Err(Error::Input(format!(
            "cannot fuse {:?} with {:?}",
            prev.grid.dims(),
            next.grid.dims()
        )));
    }
    let gate = otsu_binarize(&next.grid);
    let fused: Vec<f64> = prev
        .grid
        .as_slice()
        .iter()
        .zip(next.grid.as_slice())
        .zip(gate.grid.as_slice())
        .map(|((p, n), b)| (p + n) * b)
        .collect();
    Ok(VisualizationMap {
        layer: next.layer.clone(),
        grid: Grid::from_vec(next.grid.height(), next.grid.width(), fused)?,
        class_id: next.class_id,
        mask_count: next.mask_count,
    })
}

/// Left fold of `fusion_block` over maps ordered shallow to deep, followed
/// by a min-max rescale.
pub fn fuse_cascade(maps: &[VisualizationMap]) -> Result<ExplanationMap> {
    let (first, rest) = maps
        .split_first()
        .ok_or_else(|| Error::Input("nothing to fuse".into()))?;
    let mut acc = first.clone();
    for next in rest {
        acc = fusion_block(&acc, next)?;
    }
    Ok(ExplanationMap {
        grid: acc.grid.rescaled_unit(),
        class_id: first.class_id,
        provenance: maps.iter().map(|m| m.layer.name.clone()).collect(),
    })
}
