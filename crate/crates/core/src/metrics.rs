//! Ground-truth metrics (EBPG, top-20% mIoU, Bbox) and model-truth metrics
//! (Drop% / Increase%).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{ModelHandle, ScoreSurface, Tensor};

pub const MIOU_FRACTION: f64 = 0.20;
pub const DROP_FRACTION: f64 = 0.15;

/// Half-open pixel rectangle `[x_min, x_max) x [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.x_min as usize..self.x_max as usize).contains(&x)
            && (self.y_min as usize..self.y_max as usize).contains(&y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub class_id: usize,
    /// 1 = foreground.
    pub mask: Grid,
    pub boxes: Option<Vec<BBox>>,
}

impl GroundTruth {
    pub fn foreground(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&v| v > 0.0).count()
    }

    fn check(&self, saliency: &Grid) -> Result<()> {
        if !saliency.same_dims(&self.mask) {
            return Err(Error::Input(format!(
                "saliency is {:?}, ground truth is {:?}",
                saliency.dims(),
                self.mask.dims()
            )));
        }
        if self.foreground() == 0 {
            return Err(Error::UndefinedMetric(
                "ground truth has no foreground".into(),
            ));
        }
        Ok(())
    }
}

/// `max(1, round(fraction * n))`, rounding halves up.
pub fn top_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 0.5).floor() as usize).clamp(1, n.max(1))
}

/// Indices of the `k` largest values; ties go to the earlier raster index.
pub fn top_k_indices(saliency: &Grid, k: usize) -> Vec<usize> {
    let s = saliency.as_slice();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    idx.truncate(k);
    idx
}

pub fn top_k_mask(saliency: &Grid, k: usize) -> Grid {
    let mut m = Grid::zeros(saliency.height(), saliency.width());
    for i in top_k_indices(saliency, k) {
        m.as_mut_slice()[i] = 1.0;
    }
    m
}

/// Fraction of the map's L1 energy inside the ground-truth mask.
pub fn ebpg(saliency: &Grid, gt: &GroundTruth) -> Result<f64> {
    gt.check(saliency)?;
    let total: f64 = saliency.as_slice().iter().map(|v| v.abs()).sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedMetric(
            "explanation map has zero energy".into(),
        ));
    }
    let inside: f64 = saliency
        .as_slice()
        .iter()
        .zip(gt.mask.as_slice())
        .filter(|(_, &g)| g > 0.0)
        .map(|(v, _)| v.abs())
        .sum();
    Ok(inside / total)
}

/// IoU between the top-20% pixels of the map and the ground-truth mask.
pub fn miou_top20(saliency: &Grid, gt: &GroundTruth) -> Result<f64> {
    gt.check(saliency)?;
    let k = top_count(MIOU_FRACTION, saliency.len());
    let g = gt.mask.as_slice();
    let hits = top_k_indices(saliency, k)
        .into_iter()
        .filter(|&i| g[i] > 0.0)
        .count();
    let union = k + gt.foreground() - hits;
    Ok(hits as f64 / union as f64)
}

/// Fraction of the top-N pixels of the map lying inside the ground truth,
/// with N the ground-truth area.
pub fn bbox_score(saliency: &Grid, gt: &GroundTruth) -> Result<f64> {
    gt.check(saliency)?;
    let n = gt.foreground();
    let g = gt.mask.as_slice();
    let hits = top_k_indices(saliency, n)
        .into_iter()
        .filter(|&i| g[i] > 0.0)
        .count();
    Ok(hits as f64 / n as f64)
}

/// Class score before and after keeping only the top-15% salient pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTruthRecord {
    pub original: f64,
    pub masked: f64,
}

impl ModelTruthRecord {
    /// Per-image drop in percent; `None` when the original score is not
    /// positive.
    pub fn drop_percent(&self) -> Option<f64> {
        (self.original > 0.0)
            .then(|| (self.original - self.masked).max(0.0) / self.original * 100.0)
    }

    pub fn increased(&self) -> bool {
        self.masked > self.original
    }
}

pub fn model_truth_record(
    model: &ModelHandle,
    image: &Tensor,
    saliency: &Grid,
    class_id: usize,
    surface: ScoreSurface,
    baseline: f64,
) -> Result<ModelTruthRecord> {
    if class_id >= model.class_count() {
        return Err(Error::Input(format!("class id {class_id} out of range")));
    }
    let keep = top_k_mask(saliency, top_count(DROP_FRACTION, saliency.len()));
    let masked = image.masked(&keep, baseline)?;
    let scores = model.forward_batch_on(&[image.clone(), masked], surface)?;
    Ok(ModelTruthRecord {
        original: scores[0][class_id],
        masked: scores[1][class_id],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropIncrease {
    pub drop_percent: f64,
    pub increase_percent: f64,
    pub counted: usize,
    pub excluded: usize,
}

/// Aggregates per-image records. Records with a non-positive original score
/// are excluded from both averages and counted separately.
pub fn aggregate_drop_increase(records: &[ModelTruthRecord]) -> Result<DropIncrease> {
    let valid: Vec<&ModelTruthRecord> = records.iter().filter(|r| r.original > 0.0).collect();
    if valid.is_empty() {
        return Err(Error::UndefinedMetric(
            "no image with a positive class score".into(),
        ));
    }
    let k = valid.len() as f64;
    let drop = valid.iter().filter_map(|r| r.drop_percent()).sum::<f64>() / k;
    let increase = valid.iter().filter(|r| r.increased()).count() as f64 / k * 100.0;
    Ok(DropIncrease {
        drop_percent: drop,
        increase_percent: increase,
        counted: valid.len(),
        excluded: records.len() - valid.len(),
    })
}

pub struct DropSample<'a> {
    pub image: &'a Tensor,
    pub saliency: &'a Grid,
    pub class_id: usize,
}

pub fn drop_increase(
    model: &ModelHandle,
    samples: &[DropSample<'_>],
    surface: ScoreSurface,
    baseline: f64,
) -> Result<DropIncrease> {
    if samples.is_empty() {
        return Err(Error::Input(
            "drop/increase needs at least one image".into(),
        ));
    }
    let records = samples
        .iter()
        .map(|s| model_truth_record(model, s.image, s.saliency, s.class_id, surface, baseline))
        .collect::<Result<Vec<_>>>()?;
    aggregate_drop_increase(&records)
}

/// Pearson correlation of two equally sized maps. Two constant maps count
/// as perfectly correlated when equal and uncorrelated otherwise.
pub fn pearson(a: &Grid, b: &Grid) -> Result<f64> {
    if !a.same_dims(b) || a.is_empty() {
        return Err(Error::Input(
            "pearson needs two non-empty maps of equal size".into(),
        ));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    // one sqrt of the product: identical maps give exactly 1
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(rows: &[[f64; 2]; 2]) -> GroundTruth {
        GroundTruth {
            class_id: 0,
            mask: Grid::from_rows(rows),
            boxes: None,
        }
    }

    #[test]
    fn ebpg_examples() {
        let g = gt(&[[0.0, 1.0], [0.0, 1.0]]);
        let s = Grid::from_rows(&[[0.2, 0.8], [0.0, 1.0]]);
        assert!((ebpg(&s, &g).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(ebpg(&Grid::filled(2, 2, 0.3), &g).unwrap(), 0.5);
        let inside = Grid::from_rows(&[[0.0, 0.4], [0.0, 1.0]]);
        assert_eq!(ebpg(&inside, &g).unwrap(), 1.0);
        assert!(matches!(
            ebpg(&Grid::zeros(2, 2), &g),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn miou_examples() {
        let s = Grid::from_rows(&[[0.9, 0.1], [0.2, 0.3]]);
        assert_eq!(miou_top20(&s, &gt(&[[1.0, 0.0], [0.0, 0.0]])).unwrap(), 1.0);
        assert_eq!(miou_top20(&s, &gt(&[[0.0, 0.0], [0.0, 1.0]])).unwrap(), 0.0);
    }

    #[test]
    fn miou_is_one_when_top_set_equals_truth() {
        // 5x4 grid: k = round(0.2 * 20) = 4
        let s = Grid::from_fn(5, 4, |y, x| if y == 2 { 1.0 } else { (x as f64) * 0.01 });
        let g = GroundTruth {
            class_id: 0,
            mask: Grid::from_fn(5, 4, |y, _| if y == 2 { 1.0 } else { 0.0 }),
            boxes: None,
        };
        assert_eq!(miou_top20(&s, &g).unwrap(), 1.0);
        assert_eq!(bbox_score(&s, &g).unwrap(), 1.0);
    }

    #[test]
    fn bbox_with_uniform_map_uses_raster_order() {
        // G occupies the right half of a 4x4 grid (8 pixels); with all ties
        // the top 8 are the first two rows, 4 of which are inside G.
        let s = Grid::filled(4, 4, 1.0);
        let g = GroundTruth {
            class_id: 0,
            mask: Grid::from_fn(4, 4, |_, x| if x >= 2 { 1.0 } else { 0.0 }),
            boxes: None,
        };
        assert_eq!(bbox_score(&s, &g).unwrap(), 0.5);
    }

    #[test]
    fn bbox_single_pixel_at_max() {
        let s = Grid::from_rows(&[[0.1, 0.7], [0.3, 0.2]]);
        assert_eq!(bbox_score(&s, &gt(&[[0.0, 1.0], [0.0, 0.0]])).unwrap(), 1.0);
    }

    #[test]
    fn top_count_rounds_half_up() {
        assert_eq!(top_count(0.2, 4), 1);
        assert_eq!(top_count(0.2, 1024), 205);
        assert_eq!(top_count(0.15, 10), 2); // 1.5 rounds up
        assert_eq!(top_count(0.15, 1), 1);
    }

    #[test]
    fn drop_increase_arithmetic() {
        let r = |o, m| ModelTruthRecord {
            original: o,
            masked: m,
        };
        let same = aggregate_drop_increase(&[r(0.5, 0.5), r(0.2, 0.2)]).unwrap();
        assert_eq!((same.drop_percent, same.increase_percent), (0.0, 0.0));
        let down = aggregate_drop_increase(&[r(0.8, 0.4)]).unwrap();
        assert!((down.drop_percent - 50.0).abs() < 1e-12);
        assert_eq!(down.increase_percent, 0.0);
        let up = aggregate_drop_increase(&[r(0.4, 0.8)]).unwrap();
        assert_eq!((up.drop_percent, up.increase_percent), (0.0, 100.0));
        let excluded = aggregate_drop_increase(&[r(0.0, 0.3), r(0.8, 0.4)]).unwrap();
        assert_eq!(excluded.excluded, 1);
        assert!(aggregate_drop_increase(&[r(0.0, 0.1)]).is_err());
    }

    #[test]
    fn pearson_basics() {
        let a = Grid::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(pearson(&a, &a).unwrap(), 1.0);
        assert!((pearson(&a, &a.map(|v| -v)).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(
            pearson(&Grid::zeros(2, 2), &Grid::zeros(2, 2)).unwrap(),
            1.0
        );
        assert_eq!(pearson(&Grid::zeros(2, 2), &a).unwrap(), 0.0);
    }

    fn enumerate_overlap(s: &Grid, g: &Grid, k: usize) -> usize {
        // brute force: count pixels strictly greater, then raster ties
        let sv = s.as_slice();
        let mut chosen = vec![false; sv.len()];
        for i in 0..sv.len() {
            let better = (0..sv.len())
                .filter(|&j| sv[j] > sv[i] || (sv[j] == sv[i] && j < i))
                .count();
            chosen[i] = better < k;
        }
        chosen
            .iter()
            .zip(g.as_slice())
            .filter(|(c, g)| **c && **g > 0.0)
            .count()
    }

    proptest! {
        #[test]
        fn rank_metrics_match_enumeration(
            s in prop::collection::vec(0u8..4, 9),
            g in prop::collection::vec(0u8..2, 9),
        ) {
            prop_assume!(g.contains(&1));
            let s = Grid::from_vec(3, 3, s.into_iter().map(f64::from).collect()).unwrap();
            let mask = Grid::from_vec(3, 3, g.into_iter().map(f64::from).collect()).unwrap();
            let truth = GroundTruth { class_id: 0, mask: mask.clone(), boxes: None };
            let n = truth.foreground();
            let hits = enumerate_overlap(&s, &mask, n);
            prop_assert_eq!(bbox_score(&s, &truth).unwrap(), hits as f64 / n as f64);
            let k = top_count(MIOU_FRACTION, 9);
            let hk = enumerate_overlap(&s, &mask, k);
            let iou = hk as f64 / (k + n - hk) as f64;
            prop_assert_eq!(miou_top20(&s, &truth).unwrap(), iou);
            // overlap of the top-N set relative to twice the truth area
            prop_assert!(bbox_score(&s, &truth).unwrap() >= hits as f64 / (2 * n) as f64);
        }
    }
}
