//! Architecture-agnostic access to a trained CNN classifier: forward scores,
//! activation capture, partial gradients and block-boundary layer discovery.

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub mod container;
pub mod desk;
mod tensor;

pub use container::{load_model, ModelDescriptor, Preprocessing};
pub use desk::{DeskArchitecture, DeskCnn, DeskLayerSpec, ParamTensors};
pub use tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Convolution,
    Pooling,
}

/// One capturable activation site.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerRef {
    pub name: String,
    pub kind: SiteKind,
    pub out_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl LayerRef {
    pub fn spatial_area(&self) -> usize {
        self.out_height * self.out_width
    }
}

impl fmt::Display for LayerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}x{}x{})",
            self.name, self.out_channels, self.out_height, self.out_width
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapStack {
    pub layer: LayerRef,
    pub maps: Vec<Grid>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientStack {
    pub layer: LayerRef,
    pub class_id: usize,
    pub grads: Vec<Grid>,
}

/// Which output the pipeline treats as the class score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSurface {
    #[default]
    Logit,
    Probability,
}

impl ScoreSurface {
    pub fn apply(self, logits: &[f64]) -> Vec<f64> {
        match self {
            ScoreSurface::Logit => logits.to_vec(),
            ScoreSurface::Probability => softmax(logits),
        }
    }

    /// d(score[class_id]) / d(logits).
    pub fn score_gradient(self, logits: &[f64], class_id: usize) -> Vec<f64> {
        match self {
            ScoreSurface::Logit => {
                let mut w = vec![0.0; logits.len()];
                w[class_id] = 1.0;
                w
            }
            ScoreSurface::Probability => {
                let p = softmax(logits);
                let pc = p[class_id];
                p.iter()
                    .enumerate()
                    .map(|(j, &pj)| {
                        if j == class_id {
                            pc * (1.0 - pc)
                        } else {
                            -pc * pj
                        }
                    })
                    .collect()
            }
        }
    }
}

impl std::str::FromStr for ScoreSurface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(ScoreSurface::Logit),
            "probability" | "softmax" => Ok(ScoreSurface::Probability),
            other => Err(Error::Config(format!("unknown score surface `{other}`"))),
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Activations and output-weighted gradients gathered in a single
/// forward/backward pass.
#[derive(Clone, Debug)]
pub struct LayerProbe {
    pub logits: Vec<f64>,
    pub activations: Vec<Tensor>,
    pub gradients: Vec<Tensor>,
}

/// What a classifier backend must provide. Only `logits` is mandatory;
/// gradient and weight-mutation support are capabilities.
pub trait Backend: Send {
    fn identifier(&self) -> &str;

    fn input_shape(&self) -> InputShape;

    fn class_count(&self) -> usize;

    /// Activation sites in feedforward order.
    fn layer_catalog(&self) -> &[LayerRef];

    fn logits(&self, input: &Tensor) -> Result<Vec<f64>>;

    fn logits_batch(&self, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|t| self.logits(t)).collect()
    }

    fn activations(&self, _input: &Tensor, _layers: &[LayerRef]) -> Result<Vec<Tensor>> {
        Err(Error::Capability("activation capture".into()))
    }

    /// Runs one forward and one backward pass. `output_weights` maps the
    /// logits to the cotangent `d score / d logits`; the returned gradients
    /// are with respect to each requested layer's activation.
    fn probe(
        &self,
        _input: &Tensor,
        _layers: &[LayerRef],
        _output_weights: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<LayerProbe> {
        Err(Error::Capability("layer gradients".into()))
    }

    /// Parametric layers, deepest first.
    fn parameter_layers(&self) -> Vec<String> {
        Vec::new()
    }

    fn reinitialize_layer(&mut self, _name: &str, _seed: u64) -> Result<()> {
        Err(Error::Capability("weight mutation".into()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCount {
    pub forward: u64,
    pub backward: u64,
}

#[derive(Debug, Default)]
struct PassCounter {
    forward: AtomicU64,
    backward: AtomicU64,
}

/// A loaded classifier plus the score surface it reports and the
/// preprocessing it expects. Calls are counted for budget reports.
pub struct ModelHandle {
    backend: Box<dyn Backend>,
    surface: ScoreSurface,
    preprocessing: Preprocessing,
    counter: PassCounter,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("identifier", &self.identifier())
            .field("input", &self.input_shape())
            .field("class_count", &self.class_count())
            .field("surface", &self.surface)
            .finish()
    }
}

impl ModelHandle {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        ModelHandle {
            backend,
            surface: ScoreSurface::default(),
            preprocessing: Preprocessing::identity(3),
            counter: PassCounter::default(),
        }
    }

    pub fn with_surface(mut self, surface: ScoreSurface) -> Self {
        self.surface = surface;
        self
    }

    pub fn with_preprocessing(mut self, preprocessing: Preprocessing) -> Self {
        self.preprocessing = preprocessing;
        self
    }

    pub fn set_surface(&mut self, surface: ScoreSurface) {
        self.surface = surface;
    }

    pub fn surface(&self) -> ScoreSurface {
        self.surface
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    pub fn identifier(&self) -> &str {
        self.backend.identifier()
    }

    pub fn input_shape(&self) -> InputShape {
        self.backend.input_shape()
    }

    pub fn class_count(&self) -> usize {
        self.backend.class_count()
    }

    pub fn layer_catalog(&self) -> &[LayerRef] {
        self.backend.layer_catalog()
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn backend_mut(&mut self) -> &mut dyn Backend {
        self.backend.as_mut()
    }

    pub fn passes(&self) -> PassCount {
        PassCount {
            forward: self.counter.forward.load(Ordering::Relaxed),
            backward: self.counter.backward.load(Ordering::Relaxed),
        }
    }

    pub fn reset_passes(&self) {
        self.counter.forward.store(0, Ordering::Relaxed);
        self.counter.backward.store(0, Ordering::Relaxed);
    }

    pub fn layer(&self, name: &str) -> Result<&LayerRef> {
        self.layer_catalog()
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = self.input_shape();
        if input.shape() != (s.channels, s.height, s.width) {
            let (c, h, w) = input.shape();
            return Err(Error::Input(format!(
                "input is {c}x{h}x{w}, model expects {}x{}x{}",
                s.channels, s.height, s.width
            )));
        }
        Ok(())
    }

    fn check_class(&self, class_id: usize) -> Result<()> {
        if class_id >= self.class_count() {
            return Err(Error::Input(format!(
                "class id {class_id} out of range (model has {} classes)",
                self.class_count()
            )));
        }
        Ok(())
    }

    fn check_layers(&self, layers: &[LayerRef]) -> Result<()> {
        for l in layers {
            if !self.layer_catalog().contains(l) {
                return Err(Error::UnknownLayer(l.name.clone()));
            }
        }
        Ok(())
    }

    /// Class scores on the configured surface.
    pub fn forward(&self, input: &Tensor) -> Result<Vec<f64>> {
        self.forward_on(input, self.surface)
    }

    pub fn forward_on(&self, input: &Tensor, surface: ScoreSurface) -> Result<Vec<f64>> {
        self.check_input(input)?;
        self.counter.forward.fetch_add(1, Ordering::Relaxed);
        Ok(surface.apply(&self.backend.logits(input)?))
    }

    pub fn forward_batch(&self, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        self.forward_batch_on(inputs, self.surface)
    }

    pub fn forward_batch_on(
        &self,
        inputs: &[Tensor],
        surface: ScoreSurface,
    ) -> Result<Vec<Vec<f64>>> {
        for t in inputs {
            self.check_input(t)?;
        }
        self.counter
            .forward
            .fetch_add(inputs.len() as u64, Ordering::Relaxed);
        Ok(self
            .backend
            .logits_batch(inputs)?
            .iter()
            .map(|z| surface.apply(z))
            .collect())
    }

    pub fn capture_activations(
        &self,
        input: &Tensor,
        layers: &[LayerRef],
    ) -> Result<Vec<FeatureMapStack>> {
        self.check_input(input)?;
        self.check_layers(layers)?;
        if layers.is_empty() {
            return Ok(Vec::new());
        }
        self.counter.forward.fetch_add(1, Ordering::Relaxed);
        let acts = self.backend.activations(input, layers)?;
        Ok(layers
            .iter()
            .zip(acts)
            .map(|(l, t)| FeatureMapStack {
                layer: l.clone(),
                maps: t.planes(),
            })
            .collect())
    }

    pub fn grad_wrt_layer(
        &self,
        input: &Tensor,
        class_id: usize,
        layer: &LayerRef,
    ) -> Result<GradientStack> {
        let (_, grad) = self
            .capture_with_gradients(input, class_id, std::slice::from_ref(layer))?
            .pop()
            .expect("one layer requested");
        Ok(grad)
    }

    /// Activations and class-score gradients for several layers from one
    /// forward and one backward pass.
    pub fn capture_with_gradients(
        &self,
        input: &Tensor,
        class_id: usize,
        layers: &[LayerRef],
    ) -> Result<Vec<(FeatureMapStack, GradientStack)>> {
        self.check_input(input)?;
        self.check_class(class_id)?;
        self.check_layers(layers)?;
        let surface = self.surface;
        let weights = move |logits: &[f64]| surface.score_gradient(logits, class_id);
        let probe = self.backend.probe(input, layers, &weights)?;
        self.counter.forward.fetch_add(1, Ordering::Relaxed);
        self.counter.backward.fetch_add(1, Ordering::Relaxed);
        Ok(layers
            .iter()
            .zip(probe.activations.into_iter().zip(probe.gradients))
            .map(|(l, (a, g))| {
                (
                    FeatureMapStack {
                        layer: l.clone(),
                        maps: a.planes(),
                    },
                    GradientStack {
                        layer: l.clone(),
                        class_id,
                        grads: g.planes(),
                    },
                )
            })
            .collect())
    }

    pub fn select_block_boundary_layers(&self) -> Vec<LayerRef> {
        select_block_boundary_layers(self.layer_catalog())
    }
}

/// In feedforward order: every site immediately followed by a spatial
/// downsampling, plus the deepest convolutional site. Falls back to the
/// deepest site when the catalog has no convolutional site at all.
pub fn select_block_boundary_layers(catalog: &[LayerRef]) -> Vec<LayerRef> {
    let mut picked: Vec<usize> = catalog
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].spatial_area() < w[0].spatial_area())
        .map(|(i, _)| i)
        .collect();
    let last_conv = catalog
        .iter()
        .rposition(|l| l.kind == SiteKind::Convolution)
        .or_else(|| catalog.len().checked_sub(1));
    if let Some(i) = last_conv {
        if !picked.contains(&i) {
            picked.push(i);
            picked.sort_unstable();
        }
    }
    picked.into_iter().map(|i| catalog[i].clone()).collect()
}

/// Loads a model descriptor from disk.
pub fn load(path: impl AsRef<Path>) -> Result<ModelHandle> {
    let descriptor = ModelDescriptor::read(path.as_ref())?;
    load_model(&descriptor)
}
