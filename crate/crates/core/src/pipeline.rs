//! End-to-end explanation of one image: SISE and the RISE baseline.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    gradient_scores, postprocess_masks, select_feature_maps, AttributionMaskSet,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse_cascade, ExplanationMap};
use crate::grid::Grid;
use crate::model::{ModelHandle, PassCount, Tensor};
use crate::sampling::{
    rise_saliency_classes, visualization_map, SamplingOptions, VisualizationMap,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    pub layer: String,
    pub feature_maps: usize,
    /// Maps passing the gradient threshold.
    pub retained: usize,
    /// Masks actually used (retained minus constant maps).
    pub masks: usize,
    pub discarded_constant: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub map: ExplanationMap,
    pub layers: Vec<LayerStat>,
    pub mask_count: usize,
    pub passes: PassCount,
}

/// Everything SISE computed on the way to the final map.
#[derive(Clone, Debug)]
pub struct SiseTrace {
    pub explanation: Explanation,
    pub mask_sets: Vec<AttributionMaskSet>,
    pub visualizations: Vec<VisualizationMap>,
}

fn pass_delta(before: PassCount, after: PassCount) -> PassCount {
    PassCount {
        forward: after.forward - before.forward,
        backward: after.backward - before.backward,
    }
}

pub fn explain_sise(
    model: &ModelHandle,
    image: &Tensor,
    class_id: usize,
    mu: f64,
    opts: &SamplingOptions,
) -> Result<Explanation> {
    Ok(explain_sise_traced(model, image, class_id, mu, opts)?.explanation)
}

/// Block-boundary layers, one gradient pass, per-layer mask selection and
/// probing, then cascade fusion. Layers without usable masks are skipped;
/// if none remain the explanation fails.
pub fn explain_sise_traced(
    model: &ModelHandle,
    image: &Tensor,
    class_id: usize,
    mu: f64,
    opts: &SamplingOptions,
) -> Result<SiseTrace> {
    if !(mu >= 0.0) {
        return Err(Error::Config(format!("mu must be non-negative, got {mu}")));
    }
    let before = model.passes();
    let layers = model.select_block_boundary_layers();
    let probes = model.capture_with_gradients(image, class_id, &layers)?;
    let (h, w) = (image.height(), image.width());

    let mut stats = Vec::with_capacity(layers.len());
    let mut mask_sets = Vec::new();
    let mut visualizations = Vec::new();
    for (features, grads) in &probes {
        let scores = gradient_scores(grads);
        let retained = select_feature_maps(&scores, mu);
        let mut stat = LayerStat {
            layer: features.layer.name.clone(),
            feature_maps: features.maps.len(),
            retained: retained.len(),
            masks: 0,
            discarded_constant: 0,
            skipped: None,
        };
        let set = if retained.is_empty() {
            Err(Error::EmptyEvidence {
                layer: features.layer.name.clone(),
            })
        } else {
            postprocess_masks(features, &retained, &scores, h, w)
        };
        match set {
            Ok(set) => {
                stat.masks = set.len();
                stat.discarded_constant = set.discarded_constant;
                visualizations.push(visualization_map(model, image, class_id, &set, opts)?);
                mask_sets.push(set);
            }
            Err(e @ Error::EmptyEvidence { .. }) => {
                warn!("class {class_id}: {e}; layer skipped");
                stat.discarded_constant = retained.len();
                stat.skipped = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        stats.push(stat);
    }
    if visualizations.is_empty() {
        return Err(Error::ExplanationFailed { class_id });
    }
    let map = fuse_cascade(&visualizations)?;
    let mask_count = stats.iter().map(|s| s.masks).sum();
    Ok(SiseTrace {
        explanation: Explanation {
            map,
            layers: stats,
            mask_count,
            passes: pass_delta(before, model.passes()),
        },
        mask_sets,
        visualizations,
    })
}

/// RISE maps for several classes from one shared set of masked forwards.
/// The pass count is reported on every returned explanation.
pub fn explain_rise(
    model: &ModelHandle,
    image: &Tensor,
    class_ids: &[usize],
    masks: &[Grid],
    opts: &SamplingOptions,
) -> Result<Vec<Explanation>> {
    let before = model.passes();
    let maps = rise_saliency_classes(model, image, class_ids, masks, opts)?;
    let passes = pass_delta(before, model.passes());
    Ok(maps
        .into_iter()
        .map(|map| Explanation {
            map,
            layers: Vec::new(),
            mask_count: masks.len(),
            passes,
        })
        .collect())
}
