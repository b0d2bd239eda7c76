//! `ablate`: SISE evaluated across a list of gradient thresholds.

use log::warn;
use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use super::dataset::Sample;
use super::eval::{evaluate, load_test_samples, EvalOptions};
use super::open_model;
use super::report::{ensure_dir, fmt_opt, table, write_jsonl, write_text};
use crate::error::{Error, Result};
use crate::model::ModelHandle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mu: f64,
    pub explanations: usize,
    pub mean_masks: f64,
    pub total_masks: usize,
    pub ebpg: Option<f64>,
    pub miou: Option<f64>,
    pub bbox: Option<f64>,
    pub drop_percent: Option<f64>,
    pub increase_percent: Option<f64>,
    pub seconds_per_explanation: f64,
}

/// Sorts ascending and removes duplicates, warning about either.
pub fn normalize_mu_list(mus: &[f64]) -> Result<Vec<f64>> {
    if mus.is_empty() {
        return Err(Error::Config("empty mu list".into()));
    }
    if let Some(bad) = mus.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
        return Err(Error::Config(format!("mu must be non-negative, got {bad}")));
    }
    let mut sorted = mus.to_vec();
    if sorted.windows(2).any(|w| w[1] < w[0]) {
        warn!("mu list is not ascending; sorting it");
        sorted.sort_by(f64::total_cmp);
    }
    let before = sorted.len();
    sorted.dedup();
    if sorted.len() != before {
        warn!("mu list has duplicates; dropped {}", before - sorted.len());
    }
    Ok(sorted)
}

pub fn ablate(
    model: &ModelHandle,
    samples: &[Sample],
    class_names: &[String],
    base: &RunConfig,
    mus: &[f64],
) -> Result<Vec<AblationRow>> {
    let s = model.input_shape();
    let mut rows = Vec::new();
    for &mu in &normalize_mu_list(mus)? {
        let mut config = base.clone();
        config.method = Method::Sise;
        config.mu = mu;
        let opts = EvalOptions::from_config(&config, s.height, s.width)?;
        let report = evaluate(model, samples, class_names, &opts)?;
        let n = report.records.len();
        rows.push(AblationRow {
            mu,
            explanations: n,
            mean_masks: report.overall.mean_masks,
            total_masks: report.records.iter().map(|r| r.masks).sum(),
            ebpg: report.overall.ebpg,
            miou: report.overall.miou,
            bbox: report.overall.bbox,
            drop_percent: report.overall.drop_percent,
            increase_percent: report.overall.increase_percent,
            seconds_per_explanation: if n > 0 {
                report.explain_time.as_secs_f64() / n as f64
            } else {
                0.0
            },
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.mu),
                format!("{:.1}", r.mean_masks),
                fmt_opt(r.ebpg.map(|v| v * 100.0), 2),
                fmt_opt(r.miou.map(|v| v * 100.0), 2),
                fmt_opt(r.bbox.map(|v| v * 100.0), 2),
                fmt_opt(r.drop_percent, 2),
                fmt_opt(r.increase_percent, 2),
                format!("{:.4}", r.seconds_per_explanation),
            ]
        })
        .collect();
    table(
        &[
            "mu",
            "masks",
            "EBPG",
            "mIoU",
            "Bbox",
            "Drop%",
            "Increase%",
            "s/expl",
        ],
        &body,
    )
}

pub fn run_ablate(config: &RunConfig, mus: &[f64]) -> Result<Vec<AblationRow>> {
    config.validate()?;
    let model = open_model(config)?;
    let (samples, names) = load_test_samples(config)?;
    let rows = ablate(&model, &samples, &names, config, mus)?;
    ensure_dir(&config.out)?;
    write_jsonl(&config.out.join("ablation.jsonl"), &rows)?;
    write_text(&config.out.join("ablation.txt"), &ablation_table(&rows))?;
    Ok(rows)
}
