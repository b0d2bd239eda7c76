//! Probing the model with masked inputs: per-layer visualization maps from
//! attribution masks, and the random-mask (RISE) baseline.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMaskSet;
use crate::error::{Error, Result};
use crate::fusion::ExplanationMap;
use crate::grid::Grid;
use crate::model::{LayerRef, ModelHandle, Tensor};

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct VisualizationMap {
    pub layer: LayerRef,
    pub grid: Grid,
    pub class_id: usize,
    pub mask_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub batch_size: usize,
    /// Value (in preprocessed space) that masked-out pixels move towards.
    pub baseline: f64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            batch_size: DEFAULT_BATCH_SIZE,
            baseline: 0.0,
        }
    }
}

/// `mask / sum(mask)`.
pub fn contribution_map(mask: &Grid) -> Result<Grid> {
    let total = mask.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateMask);
    }
    Ok(mask.map(|v| v / total))
}

/// Scores every mask in batches and hands `(mask index, scores)` to `sink`
/// in mask order, so results do not depend on the batch size.
fn probe_masks(
    model: &ModelHandle,
    image: &Tensor,
    masks: &[Grid],
    opts: &SamplingOptions,
    mut sink: impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<()> {
    let batch = opts.batch_size.max(1);
    for (chunk_idx, chunk) in masks.chunks(batch).enumerate() {
        let inputs: Vec<Tensor> = chunk
            .iter()
            .map(|m| image.masked(m, opts.baseline))
            .collect::<Result<_>>()?;
        let scores = model.forward_batch(&inputs)?;
        for (j, s) in scores.iter().enumerate() {
            sink(chunk_idx * batch + j, s)?;
        }
    }
    Ok(())
}

/// Mean over the mask set of `score(I * m) * C_m`.
pub fn visualization_map(
    model: &ModelHandle,
    image: &Tensor,
    class_id: usize,
    masks: &AttributionMaskSet,
    opts: &SamplingOptions,
) -> Result<VisualizationMap> {
    if masks.is_empty() {
        return Err(Error::EmptyEvidence {
            layer: masks.layer.name.clone(),
        });
    }
    if class_id >= model.class_count() {
        return Err(Error::Input(format!("class id {class_id} out of range")));
    }
    let (h, w) = (image.height(), image.width());
    let mut acc = Grid::zeros(h, w);
    probe_masks(model, image, &masks.masks, opts, |i, scores| {
        let c = contribution_map(&masks.masks[i])?;
        let s = scores[class_id];
        for (a, v) in acc.as_mut_slice().iter_mut().zip(c.as_slice()) {
            *a += s * v;
        }
        Ok(())
    })?;
    let n = masks.len() as f64;
    Ok(VisualizationMap {
        layer: masks.layer.clone(),
        grid: acc.map(|v| v / n),
        class_id,
        mask_count: masks.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiseConfig {
    pub mask_count: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub keep_probability: f64,
    pub seed: u64,
}

impl Default for RiseConfig {
    fn default() -> Self {
        RiseConfig {
            mask_count: 4000,
            grid_h: 7,
            grid_w: 7,
            keep_probability: 0.5,
            seed: 0,
        }
    }
}

impl RiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mask_count == 0 || self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::Config(
                "RISE mask count and grid must be positive".into(),
            ));
        }
        if !(self.keep_probability > 0.0 && self.keep_probability <= 1.0) {
            return Err(Error::Config(
                "RISE keep probability must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Random smooth masks: a Bernoulli grid upsampled bilinearly to one cell
/// larger than the image, then cropped at a random sub-cell offset.
pub fn rise_masks(config: &RiseConfig, height: usize, width: usize) -> Result<Vec<Grid>> {
    config.validate()?;
    let cell_h = height.div_ceil(config.grid_h);
    let cell_w = width.div_ceil(config.grid_w);
    let up_h = (config.grid_h + 1) * cell_h;
    let up_w = (config.grid_w + 1) * cell_w;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.mask_count);
    for _ in 0..config.mask_count {
        let cells = Grid::from_fn(config.grid_h, config.grid_w, |_, _| {
            if rng.random::<f64>() < config.keep_probability {
                1.0
            } else {
                0.0
            }
        });
        let dy = rng.random_range(0..cell_h);
        let dx = rng.random_range(0..cell_w);
        let up = cells.resize_bilinear(up_h, up_w);
        out.push(up.crop(dy, dx, height, width).map(|v| v.clamp(0.0, 1.0)));
    }
    Ok(out)
}

/// RISE saliency for several classes from one shared set of masked forwards.
/// Each map is `sum_m score(I * m) m / sum_m m`, then rescaled to `[0, 1]`.
pub fn rise_saliency_classes(
    model: &ModelHandle,
    image: &Tensor,
    class_ids: &[usize],
    masks: &[Grid],
    opts: &SamplingOptions,
) -> Result<Vec<ExplanationMap>> {
    if masks.is_empty() {
        return Err(Error::EmptyEvidence {
            layer: "rise".into(),
        });
    }
    for &c in class_ids {
        if c >= model.class_count() {
            return Err(Error::Input(format!("class id {c} out of range")));
        }
    }
    let (h, w) = (image.height(), image.width());
    let mut acc = vec![Grid::zeros(h, w); class_ids.len()];
    let mut coverage = Grid::zeros(h, w);
    probe_masks(model, image, masks, opts, |i, scores| {
        let m = masks[i].as_slice();
        for (grid, &c) in acc.iter_mut().zip(class_ids) {
            let s = scores[c];
            for (a, v) in grid.as_mut_slice().iter_mut().zip(m) {
                *a += s * v;
            }
        }
        for (a, v) in coverage.as_mut_slice().iter_mut().zip(m) {
            *a += v;
        }
        Ok(())
    })?;
    let uncovered = coverage.as_slice().iter().filter(|&&c| c <= 0.0).count();
    if uncovered > 0 {
        warn!("RISE: {uncovered} pixels never covered by any mask; set to 0");
    }
    Ok(acc
        .into_iter()
        .zip(class_ids)
        .map(|(g, &class_id)| {
            let mut normalized = g;
            for (a, &c) in normalized
                .as_mut_slice()
                .iter_mut()
                .zip(coverage.as_slice())
            {
                *a = if c > 0.0 { *a / c } else { 0.0 };
            }
            ExplanationMap {
                grid: normalized.rescaled_unit(),
                class_id,
                provenance: vec!["rise".into()],
            }
        })
        .collect())
}

pub fn rise_saliency(
    model: &ModelHandle,
    image: &Tensor,
    class_id: usize,
    masks: &[Grid],
    opts: &SamplingOptions,
) -> Result<ExplanationMap> {
    Ok(
        rise_saliency_classes(model, image, &[class_id], masks, opts)?
            .pop()
            .expect("one class requested"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn contribution_examples() {
        let c = contribution_map(&Grid::filled(4, 4, 1.0)).unwrap();
        assert!(c.as_slice().iter().all(|&v| v == 1.0 / 16.0));
        let single = Grid::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(contribution_map(&single).unwrap(), single);
        assert_eq!(
            contribution_map(&Grid::from_rows(&[[0.5, 0.5], [0.0, 1.0]])).unwrap(),
            Grid::from_rows(&[[0.25, 0.25], [0.0, 0.5]])
        );
        assert!(matches!(
            contribution_map(&Grid::zeros(2, 2)),
            Err(Error::DegenerateMask)
        ));
    }

    #[test]
    fn rise_masks_are_seeded() {
        let cfg = RiseConfig {
            mask_count: 20,
            seed: 5,
            ..RiseConfig::default()
        };
        let a = rise_masks(&cfg, 32, 32).unwrap();
        assert_eq!(a, rise_masks(&cfg, 32, 32).unwrap());
        assert_ne!(
            a,
            rise_masks(&RiseConfig { seed: 6, ..cfg }, 32, 32).unwrap()
        );
        assert!(a
            .iter()
            .all(|m| m.dims() == (32, 32) && m.min() >= 0.0 && m.max() <= 1.0));
    }

    #[test]
    fn certain_keep_gives_all_ones() {
        let cfg = RiseConfig {
            mask_count: 5,
            keep_probability: 1.0,
            ..RiseConfig::default()
        };
        for m in rise_masks(&cfg, 20, 24).unwrap() {
            assert_eq!(m, Grid::filled(20, 24, 1.0));
        }
    }

    #[test]
    fn rise_mask_mean_tracks_keep_probability() {
        let cfg = RiseConfig {
            mask_count: 4000,
            keep_probability: 0.5,
            seed: 11,
            ..RiseConfig::default()
        };
        let masks = rise_masks(&cfg, 32, 32).unwrap();
        let mut mean = Grid::zeros(32, 32);
        for m in &masks {
            for (a, v) in mean.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *a += v / masks.len() as f64;
            }
        }
        let worst = mean
            .as_slice()
            .iter()
            .map(|v| (v - 0.5).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "max per-pixel deviation {worst}");
    }

    #[test]
    fn invalid_rise_config_is_rejected() {
        let bad = RiseConfig {
            keep_probability: 0.0,
            ..RiseConfig::default()
        };
        assert!(rise_masks(&bad, 8, 8).is_err());
    }

    proptest! {
        #[test]
        fn contribution_sums_to_one(vals in prop::collection::vec(0.0f64..1.0, 1..64)) {
            prop_assume!(vals.iter().any(|&v| v > 0.0));
            let n = vals.len();
            let c = contribution_map(&Grid::from_vec(1, n, vals).unwrap()).unwrap();
            prop_assert!((c.sum() - 1.0).abs() <= 1e-9);
        }
    }
}
