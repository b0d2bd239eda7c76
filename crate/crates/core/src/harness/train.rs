//! Minimal Adam trainer for the desk CNN on a ground-truth corpus. Targets
//! are uniform over the classes present in each image.

use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::container::save_desk_model;
use crate::model::{
    Backend, DeskArchitecture, DeskCnn, InputShape, ParamTensors, Preprocessing, ScoreSurface,
    Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecipe {
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    /// Output channels of each conv + pool block.
    pub widths: Vec<usize>,
    /// Residual convs per block; 0 builds the plain conv + pool stack.
    #[serde(default)]
    pub residual_depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub preprocessing: Preprocessing,
    pub score_surface: ScoreSurface,
}

impl TrainRecipe {
    pub fn for_input(height: usize, width: usize, class_count: usize) -> Self {
        TrainRecipe {
            height,
            width,
            class_count,
            widths: vec![8, 16, 32, 32],
            residual_depth: 0,
            epochs: 40,
            batch_size: 16,
            learning_rate: 3e-3,
            weight_decay: 1e-4,
            seed: 1,
            preprocessing: Preprocessing {
                mean: vec![0.5; 3],
                std: vec![0.25; 3],
            },
            score_surface: ScoreSurface::Logit,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn architecture(&self) -> DeskArchitecture {
        let input = InputShape {
            channels: 3,
            height: self.height,
            width: self.width,
        };
        if self.residual_depth > 0 {
            DeskArchitecture::residual(
                "desk-resnet",
                input,
                self.class_count,
                &self.widths,
                self.residual_depth,
            )
        } else {
            DeskArchitecture::plain("desk-cnn", input, self.class_count, &self.widths)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Share of test images whose top-1 class is present in the image.
    pub test_top1_hit: f64,
    pub manifest: Option<PathBuf>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(net: &DeskCnn) -> Self {
        let zeros: Vec<Vec<f64>> = net
            .parameters()
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, net: &mut DeskCnn, grads: &[Vec<f64>], lr: f64, decay: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        for (t, p) in net.parameters_mut().into_iter().enumerate() {
            for (k, w) in p.iter_mut().enumerate() {
                let g = grads[t][k] + decay * *w;
                self.m[t][k] = B1 * self.m[t][k] + (1.0 - B1) * g;
                self.v[t][k] = B2 * self.v[t][k] + (1.0 - B2) * g * g;
                *w -= lr * (self.m[t][k] / c1) / ((self.v[t][k] / c2).sqrt() + 1e-8);
            }
        }
    }
}

/// Uniform over the classes present.
pub fn soft_target(present: &[usize], class_count: usize) -> Vec<f64> {
    let mut t = vec![0.0; class_count];
    for &c in present {
        t[c] = 1.0 / present.len() as f64;
    }
    t
}

/// Top-1 hit rate: the predicted class is one of the classes present.
pub fn top1_hit_rate(net: &DeskCnn, inputs: &[(Tensor, Vec<usize>)]) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (x, present) in inputs {
        let z = net.logits(x)?;
        let best = (0..z.len())
            .max_by(|&a, &b| z[a].total_cmp(&z[b]))
            .unwrap_or(0);
        if present.contains(&best) {
            hits += 1;
        }
    }
    Ok(hits as f64 / inputs.len() as f64)
}

/// Epoch-at-a-time training over in-memory `(input, target)` pairs.
pub struct Trainer {
    net: DeskCnn,
    adam: Adam,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    data: Vec<(Tensor, Vec<f64>)>,
    recipe: TrainRecipe,
    epoch: usize,
}

impl Trainer {
    pub fn new(recipe: &TrainRecipe, data: Vec<(Tensor, Vec<f64>)>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let net = DeskCnn::init(recipe.architecture(), recipe.seed)?;
        Ok(Trainer {
            adam: Adam::new(&net),
            net,
            rng: ChaCha8Rng::seed_from_u64(recipe.seed ^ 0x5EED),
            order: (0..data.len()).collect(),
            data,
            recipe: recipe.clone(),
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn net(&self) -> &DeskCnn {
        &self.net
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let r = &self.recipe;
        self.order.shuffle(&mut self.rng);
        // cosine decay over the whole run
        let lr = r.learning_rate
            * 0.5
            * (1.0 + (std::f64::consts::PI * self.epoch as f64 / r.epochs.max(1) as f64).cos());
        let mut total_loss = 0.0;
        for chunk in self.order.chunks(r.batch_size.max(1)) {
            let (mut grads, loss) = batch_gradient(
                &self.net,
                chunk.iter().map(|&i| (&self.data[i].0, &self.data[i].1)),
            )?;
            total_loss += loss;
            grads.scale(1.0 / chunk.len() as f64);
            self.adam
                .update(&mut self.net, &grads.0, lr, r.weight_decay);
        }
        self.epoch += 1;
        let stats = EpochStats {
            epoch: self.epoch,
            loss: total_loss / self.data.len() as f64,
        };
        info!("epoch {}: loss {:.4}", stats.epoch, stats.loss);
        Ok(stats)
    }

    /// The trained network, rounded to the precision it is stored at.
    pub fn finish(self) -> DeskCnn {
        let mut net = self.net;
        crate::model::container::quantize_to_f32(&mut net);
        net
    }
}

/// Trains a fresh desk CNN. Deterministic for a given recipe and corpus.
pub fn train(dataset: &Dataset, recipe: &TrainRecipe) -> Result<(DeskCnn, TrainReport)> {
    if recipe.class_count != dataset.class_names.len() {
        return Err(Error::Config(format!(
            "recipe has {} classes, dataset {}",
            recipe.class_count,
            dataset.class_names.len()
        )));
    }
    let load = |split| -> Result<Vec<(Tensor, Vec<usize>)>> {
        dataset
            .load_split(split)?
            .iter()
            .map(|s| Ok((recipe.preprocessing.apply(&s.image)?, s.classes())))
            .collect()
    };
    let train_set: Vec<(Tensor, Vec<f64>)> = load(Split::Train)?
        .into_iter()
        .map(|(x, c)| (x, soft_target(&c, recipe.class_count)))
        .collect();
    let test_set = load(Split::Test)?;

    let mut trainer = Trainer::new(recipe, train_set)?;
    let mut epochs = Vec::with_capacity(recipe.epochs);
    for _ in 0..recipe.epochs {
        epochs.push(trainer.run_epoch()?);
    }
    let net = trainer.finish();
    let hit = top1_hit_rate(&net, &test_set)?;
    info!("test top-1 hit rate {hit:.3}");
    Ok((
        net,
        TrainReport {
            epochs,
            test_top1_hit: hit,
            manifest: None,
        },
    ))
}

fn batch_gradient<'a>(
    net: &DeskCnn,
    items: impl Iterator<Item = (&'a Tensor, &'a Vec<f64>)>,
) -> Result<(ParamTensors, f64)> {
    let items: Vec<_> = items.collect();
    let per_item = |(x, t): &(&Tensor, &Vec<f64>)| -> Result<(ParamTensors, f64)> {
        let mut g = net.zero_like_parameters();
        let loss = net.accumulate_loss_gradient(x, t, &mut g)?;
        Ok((g, loss))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<(ParamTensors, f64)>> = {
        use rayon::prelude::*;
        items.par_iter().map(per_item).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<(ParamTensors, f64)>> = items.iter().map(per_item).collect();
    // summed in item order for run-to-run determinism
    let mut total = net.zero_like_parameters();
    let mut loss = 0.0;
    for part in parts {
        let (g, l) = part?;
        total.add_assign(&g);
        loss += l;
    }
    Ok((total, loss))
}

/// Trains and writes `manifest.json` + `weights.bin` to `out`.
pub fn train_to_dir(dataset: &Dataset, recipe: &TrainRecipe, out: &Path) -> Result<TrainReport> {
    let (net, mut report) = train(dataset, recipe)?;
    let manifest = save_desk_model(
        &net,
        &recipe.preprocessing,
        recipe.score_surface,
        Some(dataset.class_names.clone()),
        out,
    )?;
    report.manifest = Some(manifest);
    let path = out.join("training.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
