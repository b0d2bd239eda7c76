//! `eval`: explanations for every ground-truth label of every test image,
//! scored with the ground-truth and model-truth metrics.

use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use super::config::{ClassSelection, Method, RunConfig};
use super::dataset::{Sample, Split};
use super::report::{ensure_dir, fmt_opt, table, write_jsonl, write_text};
use super::{open_dataset, open_model};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::{
    aggregate_drop_increase, bbox_score, ebpg, miou_top20, model_truth_record, ModelTruthRecord,
};
use crate::model::{ModelHandle, ScoreSurface, Tensor};
use crate::pipeline::{explain_rise, explain_sise, Explanation};
use crate::sampling::{rise_masks, SamplingOptions};

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub method: Method,
    pub mu: f64,
    pub sampling: SamplingOptions,
    pub rise_masks: Vec<Grid>,
    pub classes: ClassSelection,
    pub metric_surface: ScoreSurface,
}

impl EvalOptions {
    pub fn from_config(config: &RunConfig, height: usize, width: usize) -> Result<Self> {
        Ok(EvalOptions {
            method: config.method,
            mu: config.mu,
            sampling: config.sampling(),
            rise_masks: match config.method {
                Method::Rise => rise_masks(&config.rise(), height, width)?,
                Method::Sise => Vec::new(),
            },
            classes: config.classes.clone(),
            metric_surface: config.metric_surface,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image: String,
    pub class_id: usize,
    pub ebpg: Option<f64>,
    pub miou: f64,
    pub bbox: f64,
    pub original: f64,
    pub masked: f64,
    pub drop: Option<f64>,
    pub increase: bool,
    pub masks: usize,
    pub forward_passes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scope: String,
    pub count: usize,
    pub ebpg: Option<f64>,
    pub miou: Option<f64>,
    pub bbox: Option<f64>,
    pub drop_percent: Option<f64>,
    pub increase_percent: Option<f64>,
    pub mean_masks: f64,
    /// Records left out of EBPG or Drop% because the metric is undefined.
    pub undefined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub records: Vec<EvalRecord>,
    pub per_class: Vec<Aggregate>,
    pub overall: Aggregate,
    /// Requested classes without ground truth in the image.
    pub skipped: usize,
    /// Explanations that failed outright (no usable evidence at any layer).
    pub failed: usize,
    #[serde(skip)]
    pub explain_time: Duration,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(scope: &str, records: &[&EvalRecord]) -> Aggregate {
    let truth: Vec<ModelTruthRecord> = records
        .iter()
        .map(|r| ModelTruthRecord {
            original: r.original,
            masked: r.masked,
        })
        .collect();
    let di = aggregate_drop_increase(&truth).ok();
    let undefined = records
        .iter()
        .filter(|r| r.ebpg.is_none() || r.drop.is_none())
        .count();
    Aggregate {
        scope: scope.to_string(),
        count: records.len(),
        ebpg: mean(records.iter().filter_map(|r| r.ebpg)),
        miou: mean(records.iter().map(|r| r.miou)),
        bbox: mean(records.iter().map(|r| r.bbox)),
        drop_percent: di.map(|d| d.drop_percent),
        increase_percent: di.map(|d| d.increase_percent),
        mean_masks: mean(records.iter().map(|r| r.masks as f64)).unwrap_or(0.0),
        undefined,
    }
}

fn score(
    model: &ModelHandle,
    sample: &Sample,
    input: &Tensor,
    class_id: usize,
    explanation: &Explanation,
    surface: ScoreSurface,
    baseline: f64,
) -> Result<EvalRecord> {
    let truth = sample.truth(class_id).expect("caller checked ground truth");
    let s = &explanation.map.grid;
    let mt = model_truth_record(model, input, s, class_id, surface, baseline)?;
    Ok(EvalRecord {
        image: sample.id.clone(),
        class_id,
        ebpg: ebpg(s, truth).ok(),
        miou: miou_top20(s, truth)?,
        bbox: bbox_score(s, truth)?,
        original: mt.original,
        masked: mt.masked,
        drop: mt.drop_percent(),
        increase: mt.increased(),
        masks: explanation.mask_count,
        forward_passes: explanation.passes.forward,
    })
}

/// Evaluates in-memory samples. Only the explanation step is timed.
pub fn evaluate(
    model: &ModelHandle,
    samples: &[Sample],
    class_names: &[String],
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Config("dataset has no test images".into()));
    }
    let mut records = Vec::new();
    let (mut skipped, mut failed) = (0, 0);
    let mut explain_time = Duration::ZERO;
    for sample in samples {
        let input = model.preprocess(&sample.image)?;
        let wanted: Vec<usize> = match &opts.classes {
            ClassSelection::AllGroundTruth => sample.classes(),
            ClassSelection::Ids(ids) => ids.clone(),
        };
        let classes: Vec<usize> = wanted
            .iter()
            .copied()
            .filter(|&c| sample.truth(c).is_some())
            .collect();
        skipped += wanted.len() - classes.len();
        if classes.is_empty() {
            continue;
        }
        let started = Instant::now();
        let explanations: Vec<Option<Explanation>> = match opts.method {
            Method::Sise => classes
                .iter()
                .map(
                    |&c| match explain_sise(model, &input, c, opts.mu, &opts.sampling) {
                        Ok(e) => Ok(Some(e)),
                        Err(Error::ExplanationFailed { .. }) => {
                            warn!("{}: no evidence for class {c}", sample.id);
                            Ok(None)
                        }
                        Err(e) => Err(e),
                    },
                )
                .collect::<Result<_>>()?,
            Method::Rise => {
                explain_rise(model, &input, &classes, &opts.rise_masks, &opts.sampling)?
                    .into_iter()
                    .map(Some)
                    .collect()
            }
        };
        explain_time += started.elapsed();
        for (&c, e) in classes.iter().zip(&explanations) {
            match e {
                Some(e) => records.push(score(
                    model,
                    sample,
                    &input,
                    c,
                    e,
                    opts.metric_surface,
                    opts.sampling.baseline,
                )?),
                None => failed += 1,
            }
        }
    }
    let all: Vec<&EvalRecord> = records.iter().collect();
    let overall = aggregate("overall", &all);
    let per_class = class_names
        .iter()
        .enumerate()
        .filter_map(|(c, name)| {
            let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.class_id == c).collect();
            (!rs.is_empty()).then(|| aggregate(name, &rs))
        })
        .collect();
    Ok(MetricsReport {
        method: opts.method,
        records,
        per_class,
        overall,
        skipped,
        failed,
        explain_time,
    })
}

pub fn report_table(report: &MetricsReport) -> String {
    let rows: Vec<Vec<String>> = report
        .per_class
        .iter()
        .chain(std::iter::once(&report.overall))
        .map(|a| {
            vec![
                a.scope.clone(),
                a.count.to_string(),
                fmt_opt(a.ebpg.map(|v| v * 100.0), 2),
                fmt_opt(a.miou.map(|v| v * 100.0), 2),
                fmt_opt(a.bbox.map(|v| v * 100.0), 2),
                fmt_opt(a.drop_percent, 2),
                fmt_opt(a.increase_percent, 2),
                format!("{:.1}", a.mean_masks),
            ]
        })
        .collect();
    let mut out = format!("method: {}\n", report.method);
    out += &table(
        &[
            "class",
            "n",
            "EBPG",
            "mIoU",
            "Bbox",
            "Drop%",
            "Increase%",
            "masks",
        ],
        &rows,
    );
    if report.skipped > 0 || report.failed > 0 {
        out += &format!(
            "skipped (no ground truth): {}, failed: {}\n",
            report.skipped, report.failed
        );
    }
    out
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line<'a> {
    Record(&'a EvalRecord),
    Aggregate(&'a Aggregate),
}

pub fn write_report(report: &MetricsReport, dir: &std::path::Path) -> Result<()> {
    ensure_dir(dir)?;
    let lines = report
        .records
        .iter()
        .map(Line::Record)
        .chain(report.per_class.iter().map(Line::Aggregate))
        .chain(std::iter::once(Line::Aggregate(&report.overall)));
    write_jsonl(&dir.join(format!("eval_{}.jsonl", report.method)), lines)?;
    write_text(
        &dir.join(format!("eval_{}.txt", report.method)),
        &report_table(report),
    )
}

/// Loads the test split, honouring `config.limit`.
pub fn load_test_samples(config: &RunConfig) -> Result<(Vec<Sample>, Vec<String>)> {
    let ds = open_dataset(config)?;
    let mut ids = ds.ids(Split::Test)?;
    if let Some(n) = config.limit {
        ids.truncate(n);
    }
    if ids.is_empty() {
        return Err(Error::Config(format!(
            "{} has no test images",
            ds.root().display()
        )));
    }
    let samples = ids
        .iter()
        .map(|id| ds.load(id))
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, ds.class_names.clone()))
}

pub fn run_eval(config: &RunConfig) -> Result<MetricsReport> {
    config.validate()?;
    let model = open_model(config)?;
    let (samples, names) = load_test_samples(config)?;
    let s = model.input_shape();
    let opts = EvalOptions::from_config(config, s.height, s.width)?;
    let report = evaluate(&model, &samples, &names, &opts)?;
    write_report(&report, &config.out)?;
    Ok(report)
}
