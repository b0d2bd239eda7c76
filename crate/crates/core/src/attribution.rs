//! Gradient scoring of feature maps and their conversion into attribution
//! masks.

use log::debug;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{FeatureMapStack, GradientStack, LayerRef};

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMaskSet {
    pub layer: LayerRef,
    pub masks: Vec<Grid>,
    /// Feature-map index each mask came from.
    pub source_indices: Vec<usize>,
    /// Gradient score of each source map.
    pub scores: Vec<f64>,
    /// Retained maps dropped because they were spatially constant.
    pub discarded_constant: usize,
}

impl AttributionMaskSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Sum of every gradient map over all spatial locations.
pub fn gradient_scores(grads: &GradientStack) -> Vec<f64> {
    grads.grads.iter().map(Grid::sum).collect()
}

/// Indices `k` with `scores[k] > mu * max(scores)`; empty when the maximum
/// is not positive.
pub fn select_feature_maps(scores: &[f64], mu: f64) -> Vec<usize> {
    let beta = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(beta > 0.0) {
        return Vec::new();
    }
    let threshold = mu * beta;
    scores
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > threshold)
        .map(|(k, _)| k)
        .collect()
}

/// Upsamples each retained map to `height x width` and rescales it to span
/// exactly `[0, 1]`. Constant maps are dropped and counted.
pub fn postprocess_masks(
    features: &FeatureMapStack,
    retained: &[usize],
    scores: &[f64],
    height: usize,
    width: usize,
) -> Result<AttributionMaskSet> {
    let mut set = AttributionMaskSet {
        layer: features.layer.clone(),
        masks: Vec::with_capacity(retained.len()),
        source_indices: Vec::with_capacity(retained.len()),
        scores: Vec::with_capacity(retained.len()),
        discarded_constant: 0,
    };
    for &k in retained {
        let map = features.maps.get(k).ok_or_else(|| {
            Error::Input(format!(
                "feature map index {k} out of range for {}",
                features.layer
            ))
        })?;
        let up = map.resize_bilinear(height, width);
        let (lo, hi) = (up.min(), up.max());
        if !(hi > lo) {
            set.discarded_constant += 1;
            continue;
        }
        let span = hi - lo;
        let mut mask = up.map(|v| ((v - lo) / span).clamp(0.0, 1.0));
        // pin the extremes exactly; rounding in (v - lo) / span can miss 1.0
        if let Some(i) = up.as_slice().iter().position(|&v| v == hi) {
            mask.as_mut_slice()[i] = 1.0;
        }
        set.masks.push(mask);
        set.source_indices.push(k);
        set.scores.push(scores.get(k).copied().unwrap_or(f64::NAN));
    }
    if set.discarded_constant > 0 {
        debug!(
            "{}: discarded {} constant feature maps",
            features.layer.name, set.discarded_constant
        );
    }
    if set.is_empty() && !retained.is_empty() {
        return Err(Error::EmptyEvidence {
            layer: features.layer.name.clone(),
        });
    }
    Ok(set)
}

/// Scores, selects and post-processes one layer in a single call.
pub fn attribution_masks(
    features: &FeatureMapStack,
    grads: &GradientStack,
    mu: f64,
    height: usize,
    width: usize,
) -> Result<AttributionMaskSet> {
    let scores = gradient_scores(grads);
    let retained = select_feature_maps(&scores, mu);
    if retained.is_empty() {
        return Err(Error::EmptyEvidence {
            layer: features.layer.name.clone(),
        });
    }
    postprocess_masks(features, &retained, &scores, height, width)
}
