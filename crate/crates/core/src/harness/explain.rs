//! `explain`: one image, one class, one XMAP plus a run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use super::dataset::load_rgb;
use super::report::{ensure_dir, heatmap_overlay, save_rgb, write_json};
use super::{open_model, xmap};
use crate::error::{Error, Result};
use crate::model::{ModelHandle, PassCount, Tensor};
use crate::pipeline::{explain_rise, explain_sise_traced, Explanation, LayerStat};
use crate::sampling::rise_masks;
use crate::ExplanationMap;

#[derive(Clone, Debug)]
pub struct ExplainRequest {
    pub image: PathBuf,
    pub class_id: usize,
    pub dump_masks: bool,
    pub heatmap: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainManifest {
    pub config_hash: String,
    pub seed: u64,
    pub method: Method,
    pub mu: f64,
    pub model: String,
    pub image: String,
    pub class_id: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerStat>,
    pub mask_count: usize,
    pub passes: PassCount,
    pub xmap: String,
}

/// Runs the configured method on a preprocessed input.
pub fn explain_tensor(
    model: &ModelHandle,
    config: &RunConfig,
    input: &Tensor,
    class_id: usize,
) -> Result<Explanation> {
    match config.method {
        Method::Sise => {
            Ok(
                explain_sise_traced(model, input, class_id, config.mu, &config.sampling())?
                    .explanation,
            )
        }
        Method::Rise => {
            let masks = rise_masks(&config.rise(), input.height(), input.width())?;
            Ok(
                explain_rise(model, input, &[class_id], &masks, &config.sampling())?
                    .pop()
                    .expect("one class"),
            )
        }
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

pub fn run_explain(config: &RunConfig, request: &ExplainRequest) -> Result<ExplainManifest> {
    config.validate()?;
    let model = open_model(config)?;
    if request.class_id >= model.class_count() {
        return Err(Error::Config(format!(
            "class id {} out of range (model has {} classes)",
            request.class_id,
            model.class_count()
        )));
    }
    let rgb = load_rgb(&request.image)?;
    let input = model.preprocess(&rgb)?;
    ensure_dir(&config.out)?;
    let stem = format!("{}_{}", stem_of(&request.image), request.class_id);

    let explanation = match config.method {
        Method::Sise => {
            let trace = explain_sise_traced(
                &model,
                &input,
                request.class_id,
                config.mu,
                &config.sampling(),
            )?;
            if request.dump_masks {
                let dir = config.out.join(format!("{stem}_masks"));
                ensure_dir(&dir)?;
                for set in &trace.mask_sets {
                    for (mask, k) in set.masks.iter().zip(&set.source_indices) {
                        xmap::write(&dir.join(format!("{}_{k:04}.xmap", set.layer.name)), mask)?;
                    }
                }
                for v in &trace.visualizations {
                    xmap::write(
                        &dir.join(format!("{}_visualization.xmap", v.layer.name)),
                        &v.grid,
                    )?;
                }
            }
            trace.explanation
        }
        Method::Rise => explain_tensor(&model, config, &input, request.class_id)?,
    };

    let map = ExplanationMap {
        grid: xmap::quantize(&explanation.map.grid),
        ..explanation.map.clone()
    };
    let xmap_name = format!("{stem}.xmap");
    xmap::write(&config.out.join(&xmap_name), &map.grid)?;
    if request.heatmap {
        save_rgb(
            &heatmap_overlay(&rgb, &map.grid),
            &config.out.join(format!("{stem}.png")),
        )?;
    }
    let manifest = ExplainManifest {
        config_hash: config.hash(),
        seed: config.seed,
        method: config.method,
        mu: config.mu,
        model: model.identifier().to_string(),
        image: request
            .image
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        class_id: request.class_id,
        height: map.grid.height(),
        width: map.grid.width(),
        layers: explanation.layers,
        mask_count: explanation.mask_count,
        passes: explanation.passes,
        xmap: xmap_name,
    };
    write_json(&config.out.join(format!("{stem}.manifest.json")), &manifest)?;
    Ok(manifest)
}
