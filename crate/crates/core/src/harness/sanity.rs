//! `sanity`: explanations from progressively re-randomized copies of the
//! model, compared against the trained model's explanations.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::Sample;
use super::eval::load_test_samples;
use super::explain::explain_tensor;
use super::open_model;
use super::report::{ensure_dir, table, write_jsonl, write_text};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::pearson;
use crate::model::ModelHandle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityStage {
    pub stage: usize,
    /// Parametric layers re-initialized so far, deepest first.
    pub randomized: Vec<String>,
    pub correlations: Vec<f64>,
    pub mean_correlation: f64,
    /// Images whose explanation failed at this stage (counted as zero maps).
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub images: Vec<String>,
    pub stages: Vec<SanityStage>,
    /// Whether mean correlation never rises from one stage to the next.
    /// Reported, not required.
    pub monotone_nonincreasing: bool,
}

fn explain_all(
    model: &ModelHandle,
    config: &RunConfig,
    samples: &[Sample],
) -> Result<(Vec<Grid>, usize)> {
    let mut maps = Vec::with_capacity(samples.len());
    let mut failed = 0;
    for s in samples {
        let input = model.preprocess(&s.image)?;
        let class_id = s.classes()[0];
        match explain_tensor(model, config, &input, class_id) {
            Ok(e) => maps.push(e.map.grid),
            Err(Error::ExplanationFailed { .. }) => {
                failed += 1;
                maps.push(Grid::zeros(input.height(), input.width()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((maps, failed))
}

/// `load` must return a fresh copy of the trained model on every call.
/// Stage 0 is the trained model; stage `s` re-initializes the `s` deepest
/// parametric layers; the last stage re-initializes all of them.
pub fn sanity(
    load: impl Fn() -> Result<ModelHandle>,
    config: &RunConfig,
    samples: &[Sample],
) -> Result<SanityReport> {
    let samples: Vec<Sample> = samples
        .iter()
        .filter(|s| !s.truths.is_empty())
        .cloned()
        .collect();
    if samples.is_empty() {
        return Err(Error::Config(
            "sanity check needs images with ground truth".into(),
        ));
    }
    let trained = load()?;
    let layers = trained.backend().parameter_layers();
    if layers.is_empty() {
        return Err(Error::Capability("weight mutation".into()));
    }
    let (reference, _) = explain_all(&trained, config, &samples)?;
    let mut stages = Vec::with_capacity(layers.len() + 1);
    // stage 0 re-explains with a fresh copy of the trained model
    for depth in 0..=layers.len() {
        let mut model = load()?;
        for (i, name) in layers[..depth].iter().enumerate() {
            model
                .backend_mut()
                .reinitialize_layer(name, config.seed.wrapping_add(1000 + i as u64))?;
        }
        let (maps, failed) = explain_all(&model, config, &samples)?;
        let correlations = reference
            .iter()
            .zip(&maps)
            .map(|(a, b)| pearson(a, b))
            .collect::<Result<Vec<_>>>()?;
        let mean = correlations.iter().sum::<f64>() / correlations.len() as f64;
        stages.push(SanityStage {
            stage: depth,
            randomized: layers[..depth].to_vec(),
            correlations,
            mean_correlation: mean,
            failed,
        });
    }
    let monotone = stages
        .windows(2)
        .all(|w| w[1].mean_correlation <= w[0].mean_correlation);
    Ok(SanityReport {
        images: samples.iter().map(|s| s.id.clone()).collect(),
        stages,
        monotone_nonincreasing: monotone,
    })
}

pub fn sanity_table(report: &SanityReport) -> String {
    let rows: Vec<Vec<String>> = report
        .stages
        .iter()
        .map(|s| {
            vec![
                s.stage.to_string(),
                s.randomized
                    .last()
                    .cloned()
                    .unwrap_or_else(|| "(trained)".into()),
                format!("{:.4}", s.mean_correlation),
                s.failed.to_string(),
            ]
        })
        .collect();
    let mut out = table(&["stage", "randomized down to", "mean r", "failed"], &rows);
    out += &format!(
        "monotone non-increasing: {}\n",
        report.monotone_nonincreasing
    );
    out
}

pub fn run_sanity(config: &RunConfig) -> Result<SanityReport> {
    config.validate()?;
    let (samples, _) = load_test_samples(config)?;
    let report = sanity(|| open_model(config), config, &samples)?;
    ensure_dir(&config.out)?;
    write_jsonl(&config.out.join("sanity.jsonl"), &report.stages)?;
    write_text(&config.out.join("sanity.txt"), &sanity_table(&report))?;
    Ok(report)
}
