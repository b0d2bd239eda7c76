//! Browser demo. The page renders synthetic shape scenes, trains a small
//! desk CNN in-page one epoch at a time, and explains any class of the
//! current scene with SISE or RISE. Otsu binarization of the result is a
//! separate call so the page can show the fusion mask.
//!
//! [`Session`] is plain Rust and tested natively; [`Demo`] is the thin
//! wasm-bindgen wrapper the page talks to.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use sise_core::fusion::otsu_binarize;
use sise_core::harness::synthetic::{render_scene, Scene, SHAPE_CLASSES};
use sise_core::harness::train::{soft_target, TrainRecipe, Trainer};
use sise_core::model::{ModelHandle, Tensor};
use sise_core::pipeline::{explain_rise, explain_sise_traced};
use sise_core::sampling::{rise_masks, RiseConfig, SamplingOptions};
use sise_core::Grid;

pub const SIZE: u32 = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub map: Vec<f32>,
    pub mask_count: usize,
    pub forward_passes: u64,
    pub backward_passes: u64,
    /// `name:masks` per probed layer, for display.
    pub layers: Vec<String>,
}

/// Demo state: the current scene, an optional training run and the
/// trained model.
pub struct Session {
    recipe: TrainRecipe,
    trainer: Option<Trainer>,
    model: Option<ModelHandle>,
    scene: Option<Scene>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        let mut recipe = TrainRecipe::for_input(SIZE as usize, SIZE as usize, SHAPE_CLASSES.len());
        recipe.epochs = 12;
        Session {
            recipe,
            trainer: None,
            model: None,
            scene: None,
        }
    }

    pub fn scene_rgba(&mut self, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = render_scene(&mut rng, SIZE, SIZE, 3);
        let rgba = scene
            .image
            .pixels()
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect();
        self.scene = Some(scene);
        rgba
    }

    pub fn scene_classes(&self) -> Vec<u32> {
        self.scene
            .as_ref()
            .map(|s| s.classes().into_iter().map(|c| c as u32).collect())
            .unwrap_or_default()
    }

    /// Renders `images` training scenes and prepares an `epochs`-long run.
    pub fn start_training(
        &mut self,
        images: usize,
        epochs: usize,
        seed: u64,
    ) -> Result<(), String> {
        self.recipe.epochs = epochs.max(1);
        self.recipe.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let data = (0..images)
            .map(|_| {
                let scene = render_scene(&mut rng, SIZE, SIZE, 3);
                let x = self.recipe.preprocessing.apply(&scene.image)?;
                Ok((x, soft_target(&scene.classes(), SHAPE_CLASSES.len())))
            })
            .collect::<sise_core::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        self.trainer = Some(Trainer::new(&self.recipe, data).map_err(|e| e.to_string())?);
        self.model = None;
        Ok(())
    }

    /// Runs one epoch and returns its mean loss. The model becomes usable
    /// once the last epoch finishes.
    pub fn train_epoch(&mut self) -> Result<f64, String> {
        let trainer = self
            .trainer
            .as_mut()
            .ok_or("training has not been started")?;
        let stats = trainer.run_epoch().map_err(|e| e.to_string())?;
        if trainer.epochs_done() >= self.recipe.epochs {
            let net = self.trainer.take().expect("checked above").finish();
            self.model = Some(
                ModelHandle::from_desk(net).with_preprocessing(self.recipe.preprocessing.clone()),
            );
        }
        Ok(stats.loss)
    }

    pub fn is_trained(&self) -> bool {
        self.model.is_some()
    }

    /// Class probabilities for the current scene.
    pub fn predict(&self) -> Result<Vec<f64>, String> {
        let (model, x) = self.ready()?;
        model
            .forward_on(&x, sise_core::model::ScoreSurface::Probability)
            .map_err(|e| e.to_string())
    }

    fn ready(&self) -> Result<(&ModelHandle, Tensor), String> {
        let model = self.model.as_ref().ok_or("no trained model yet")?;
        let scene = self.scene.as_ref().ok_or("no scene yet")?;
        let x = model.preprocess(&scene.image).map_err(|e| e.to_string())?;
        Ok((model, x))
    }

    pub fn explain(
        &self,
        class_id: usize,
        method: &str,
        mu: f64,
        rise_count: usize,
    ) -> Result<MapResult, String> {
        let (model, x) = self.ready()?;
        let opts = SamplingOptions::default();
        let e = match method {
            "sise" => {
                explain_sise_traced(model, &x, class_id, mu, &opts)
                    .map_err(|e| e.to_string())?
                    .explanation
            }
            "rise" => {
                let cfg = RiseConfig {
                    mask_count: rise_count.max(1),
                    ..RiseConfig::default()
                };
                let masks = rise_masks(&cfg, x.height(), x.width()).map_err(|e| e.to_string())?;
                explain_rise(model, &x, &[class_id], &masks, &opts)
                    .map_err(|e| e.to_string())?
                    .remove(0)
            }
            other => return Err(format!("unknown method `{other}`")),
        };
        Ok(MapResult {
            map: e.map.grid.as_slice().iter().map(|&v| v as f32).collect(),
            mask_count: e.mask_count,
            forward_passes: e.passes.forward,
            backward_passes: e.passes.backward,
            layers: e
                .layers
                .iter()
                .map(|l| format!("{}:{}", l.layer, l.masks))
                .collect(),
        })
    }
}

/// Otsu foreground of a row-major map as 0/1 bytes.
pub fn otsu(map: &[f32], height: usize, width: usize) -> Result<Vec<u8>, String> {
    let grid = Grid::from_vec(height, width, map.iter().map(|&v| v as f64).collect())
        .map_err(|e| e.to_string())?;
    Ok(otsu_binarize(&grid)
        .grid
        .as_slice()
        .iter()
        .map(|&v| v as u8)
        .collect())
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
}

#[wasm_bindgen]
pub struct Explanation {
    inner: MapResult,
}

#[wasm_bindgen]
impl Explanation {
    #[wasm_bindgen(getter)]
    pub fn map(&self) -> Vec<f32> {
        self.inner.map.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mask_count(&self) -> usize {
        self.inner.mask_count
    }

    #[wasm_bindgen(getter)]
    pub fn forward_passes(&self) -> f64 {
        self.inner.forward_passes as f64
    }

    #[wasm_bindgen(getter)]
    pub fn backward_passes(&self) -> f64 {
        self.inner.backward_passes as f64
    }

    #[wasm_bindgen(getter)]
    pub fn layers(&self) -> String {
        self.inner.layers.join(" ")
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo {
            session: Session::new(),
        }
    }

    pub fn size() -> u32 {
        SIZE
    }

    pub fn class_names() -> Vec<String> {
        SHAPE_CLASSES.iter().map(|s| s.to_string()).collect()
    }

    /// Renders a scene and returns it as RGBA bytes.
    pub fn new_scene(&mut self, seed: u32) -> Vec<u8> {
        self.session.scene_rgba(seed as u64)
    }

    pub fn scene_classes(&self) -> Vec<u32> {
        self.session.scene_classes()
    }

    pub fn start_training(
        &mut self,
        images: usize,
        epochs: usize,
        seed: u32,
    ) -> Result<(), JsError> {
        self.session
            .start_training(images, epochs, seed as u64)
            .map_err(|e| JsError::new(&e))
    }

    pub fn train_epoch(&mut self) -> Result<f64, JsError> {
        self.session.train_epoch().map_err(|e| JsError::new(&e))
    }

    pub fn is_trained(&self) -> bool {
        self.session.is_trained()
    }

    pub fn predict(&self) -> Result<Vec<f64>, JsError> {
        self.session.predict().map_err(|e| JsError::new(&e))
    }

    pub fn explain(
        &self,
        class_id: usize,
        method: &str,
        mu: f64,
        rise_masks: usize,
    ) -> Result<Explanation, JsError> {
        self.session
            .explain(class_id, method, mu, rise_masks)
            .map(|inner| Explanation { inner })
            .map_err(|e| JsError::new(&e))
    }

    pub fn otsu(map: &[f32], height: usize, width: usize) -> Result<Vec<u8>, JsError> {
        otsu(map, height, width).map_err(|e| JsError::new(&e))
    }
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}
