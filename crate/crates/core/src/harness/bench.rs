//! `bench`: wall-clock and exact pass budgets of SISE versus RISE.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use super::eval::load_test_samples;
use super::open_model;
use super::report::{ensure_dir, table, write_jsonl, write_text};
use super::synthetic::render_scene;
use crate::error::{Error, Result};
use crate::model::{ModelHandle, Tensor};
use crate::pipeline::{explain_rise, explain_sise};
use crate::sampling::rise_masks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub trials: usize,
    pub mean_seconds: f64,
    pub mean_forward_passes: f64,
    pub mean_backward_passes: f64,
    pub mean_masks: f64,
}

pub fn bench(
    model: &ModelHandle,
    config: &RunConfig,
    inputs: &[(Tensor, usize)],
) -> Result<Vec<BenchRow>> {
    if inputs.is_empty() {
        return Err(Error::Config("bench needs at least one trial".into()));
    }
    let n = inputs.len() as f64;
    let mut rows = Vec::new();

    let (mut secs, mut fwd, mut bwd, mut masks) = (0.0, 0u64, 0u64, 0usize);
    let mut counted = 0usize;
    for (x, c) in inputs {
        let t = Instant::now();
        match explain_sise(model, x, *c, config.mu, &config.sampling()) {
            Ok(e) => {
                secs += t.elapsed().as_secs_f64();
                fwd += e.passes.forward;
                bwd += e.passes.backward;
                masks += e.mask_count;
                counted += 1;
            }
            Err(Error::ExplanationFailed { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let k = counted.max(1) as f64;
    rows.push(BenchRow {
        method: Method::Sise,
        trials: counted,
        mean_seconds: secs / k,
        mean_forward_passes: fwd as f64 / k,
        mean_backward_passes: bwd as f64 / k,
        mean_masks: masks as f64 / k,
    });

    let (h, w) = (inputs[0].0.height(), inputs[0].0.width());
    let t = Instant::now();
    let masks = rise_masks(&config.rise(), h, w)?;
    let mask_secs = t.elapsed().as_secs_f64();
    let (mut secs, mut fwd) = (mask_secs, 0u64);
    for (x, c) in inputs {
        let t = Instant::now();
        let e = explain_rise(model, x, &[*c], &masks, &config.sampling())?;
        secs += t.elapsed().as_secs_f64();
        fwd += e[0].passes.forward;
    }
    rows.push(BenchRow {
        method: Method::Rise,
        trials: inputs.len(),
        mean_seconds: secs / n,
        mean_forward_passes: fwd as f64 / n,
        mean_backward_passes: 0.0,
        mean_masks: masks.len() as f64,
    });
    Ok(rows)
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                r.trials.to_string(),
                format!("{:.4}", r.mean_seconds),
                format!("{:.1}", r.mean_forward_passes),
                format!("{:.1}", r.mean_backward_passes),
                format!("{:.1}", r.mean_masks),
            ]
        })
        .collect();
    table(
        &["method", "trials", "s/expl", "forward", "backward", "masks"],
        &body,
    )
}

/// Uses the test split when a dataset is configured, otherwise renders
/// synthetic scenes at the model's input size.
pub fn run_bench(config: &RunConfig, trials: usize) -> Result<Vec<BenchRow>> {
    config.validate()?;
    if trials == 0 {
        return Err(Error::Config("--trials must be positive".into()));
    }
    let model = open_model(config)?;
    let mut inputs = Vec::with_capacity(trials);
    if config.data.is_some() {
        let (samples, _) = load_test_samples(config)?;
        for s in samples
            .iter()
            .filter(|s| !s.truths.is_empty())
            .cycle()
            .take(trials)
        {
            inputs.push((model.preprocess(&s.image)?, s.classes()[0]));
        }
    } else {
        let shape = model.input_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..trials {
            let scene = render_scene(&mut rng, shape.height as u32, shape.width as u32, 3);
            let class_id = scene.classes()[0].min(model.class_count() - 1);
            inputs.push((model.preprocess(&scene.image)?, class_id));
        }
    }
    let rows = bench(&model, config, &inputs)?;
    ensure_dir(&config.out)?;
    write_jsonl(&config.out.join("bench.jsonl"), &rows)?;
    write_text(&config.out.join("bench.txt"), &bench_table(&rows))?;
    Ok(rows)
}
