//! The reference desk CNN: plain 3x3 convolutions (ReLU fused, optional
//! identity skip), 2x2 max pooling, and a global-average-pool linear head.
//! Small enough to train and finite-difference on a laptop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Backend, InputShape, LayerProbe, LayerRef, SiteKind, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeskLayerSpec {
    /// 3x3 convolution, stride 1, zero padding 1, followed by ReLU. With
    /// `residual` the layer input is added after the ReLU.
    Conv {
        name: String,
        out_channels: usize,
        #[serde(default)]
        residual: bool,
    },
    /// 2x2 max pooling with stride 2.
    MaxPool { name: String },
}

impl DeskLayerSpec {
    pub fn name(&self) -> &str {
        match self {
            DeskLayerSpec::Conv { name, .. } | DeskLayerSpec::MaxPool { name } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskArchitecture {
    pub identifier: String,
    pub input: InputShape,
    pub class_count: usize,
    pub layers: Vec<DeskLayerSpec>,
}

impl DeskArchitecture {
    /// `widths.len()` blocks of conv + 2x2 pool.
    pub fn plain(
        identifier: &str,
        input: InputShape,
        class_count: usize,
        widths: &[usize],
    ) -> Self {
        let mut layers = Vec::new();
        for (b, &w) in widths.iter().enumerate() {
            layers.push(DeskLayerSpec::Conv {
                name: format!("block{}_conv", b + 1),
                out_channels: w,
                residual: false,
            });
            layers.push(DeskLayerSpec::MaxPool {
                name: format!("block{}_pool", b + 1),
            });
        }
        DeskArchitecture {
            identifier: identifier.into(),
            input,
            class_count,
            layers,
        }
    }

    /// Each block is a widening conv followed by `depth` residual convs, then
    /// a pool; the final block has no pool.
    pub fn residual(
        identifier: &str,
        input: InputShape,
        class_count: usize,
        widths: &[usize],
        depth: usize,
    ) -> Self {
        let mut layers = Vec::new();
        for (b, &w) in widths.iter().enumerate() {
            layers.push(DeskLayerSpec::Conv {
                name: format!("block{}_stem", b + 1),
                out_channels: w,
                residual: false,
            });
            for r in 0..depth {
                layers.push(DeskLayerSpec::Conv {
                    name: format!("block{}_res{}", b + 1, r + 1),
                    out_channels: w,
                    residual: true,
                });
            }
            if b + 1 < widths.len() {
                layers.push(DeskLayerSpec::MaxPool {
                    name: format!("block{}_pool", b + 1),
                });
            }
        }
        DeskArchitecture {
            identifier: identifier.into(),
            input,
            class_count,
            layers,
        }
    }

    /// Validates the stack and derives the activation-site catalog.
    pub fn catalog(&self) -> Result<Vec<LayerRef>> {
        let InputShape {
            channels: mut c,
            height: mut h,
            width: mut w,
        } = self.input;
        if c == 0 || h == 0 || w == 0 || self.class_count == 0 {
            return Err(Error::Load(
                "input shape and class count must be positive".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            if !seen.insert(layer.name().to_string()) {
                return Err(Error::Load(format!(
                    "duplicate layer name `{}`",
                    layer.name()
                )));
            }
            let kind = match layer {
                DeskLayerSpec::Conv {
                    out_channels,
                    residual,
                    name,
                } => {
                    if *out_channels == 0 || (*residual && *out_channels != c) {
                        return Err(Error::Load(format!(
                            "layer `{name}`: residual conv must keep {c} channels"
                        )));
                    }
                    c = *out_channels;
                    SiteKind::Convolution
                }
                DeskLayerSpec::MaxPool { name } => {
                    if h < 2 || w < 2 {
                        return Err(Error::Load(format!("layer `{name}` pools a {h}x{w} map")));
                    }
                    h /= 2;
                    w /= 2;
                    SiteKind::Pooling
                }
            };
            out.push(LayerRef {
                name: layer.name().to_string(),
                kind,
                out_channels: c,
                out_height: h,
                out_width: w,
            });
        }
        if out.is_empty() {
            return Err(Error::Load("architecture has no layers".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvParams {
    in_channels: usize,
    out_channels: usize,
    residual: bool,
    /// `[out][in][3][3]`
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Conv(ConvParams),
    MaxPool,
}

/// Flat parameter tensors in a fixed order: for every conv layer its weight
/// then bias, then the head weight and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensors(pub Vec<Vec<f64>>);

impl ParamTensors {
    pub fn add_assign(&mut self, other: &ParamTensors) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.0 {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeskCnn {
    arch: DeskArchitecture,
    catalog: Vec<LayerRef>,
    layers: Vec<Layer>,
    /// `[class][channel]`
    head_weight: Vec<f64>,
    head_bias: Vec<f64>,
}

struct Trace {
    outputs: Vec<Tensor>,
    /// ReLU output of residual convs (before the skip is added).
    relu: Vec<Option<Tensor>>,
    argmax: Vec<Option<Vec<usize>>>,
    pooled: Vec<f64>,
    logits: Vec<f64>,
}

impl DeskCnn {
    /// Fresh He-initialised network.
    pub fn init(arch: DeskArchitecture, seed: u64) -> Result<Self> {
        let catalog = arch.catalog()?;
        let mut in_c = arch.input.channels;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for spec in &arch.layers {
            match spec {
                DeskLayerSpec::Conv {
                    out_channels,
                    residual,
                    ..
                } => {
                    layers.push(Layer::Conv(ConvParams {
                        in_channels: in_c,
                        out_channels: *out_channels,
                        residual: *residual,
                        weight: vec![0.0; out_channels * in_c * 9],
                        bias: vec![0.0; *out_channels],
                    }));
                    in_c = *out_channels;
                }
                DeskLayerSpec::MaxPool { .. } => layers.push(Layer::MaxPool),
            }
        }
        let classes = arch.class_count;
        let mut net = DeskCnn {
            arch,
            catalog,
            layers,
            head_weight: vec![0.0; classes * in_c],
            head_bias: vec![0.0; classes],
        };
        let names = net.parameter_layers();
        for (i, name) in names.iter().enumerate() {
            net.reinitialize_layer(name, seed.wrapping_add(i as u64 * 0x9E37_79B9))?;
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &DeskArchitecture {
        &self.arch
    }

    fn final_channels(&self) -> usize {
        self.catalog.last().map_or(0, |l| l.out_channels)
    }

    /// Names and shapes of the flat parameter tensors, in `ParamTensors` order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (spec, layer) in self.arch.layers.iter().zip(&self.layers) {
            if let Layer::Conv(p) = layer {
                out.push((
                    format!("{}.weight", spec.name()),
                    vec![p.out_channels, p.in_channels, 3, 3],
                ));
                out.push((format!("{}.bias", spec.name()), vec![p.out_channels]));
            }
        }
        let c = self.final_channels();
        out.push(("head.weight".into(), vec![self.arch.class_count, c]));
        out.push(("head.bias".into(), vec![self.arch.class_count]));
        out
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            if let Layer::Conv(p) = layer {
                out.push(&p.weight);
                out.push(&p.bias);
            }
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Conv(p) = layer {
                out.push(&mut p.weight);
                out.push(&mut p.bias);
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn zero_like_parameters(&self) -> ParamTensors {
        ParamTensors(
            self.parameters()
                .iter()
                .map(|p| vec![0.0; p.len()])
                .collect(),
        )
    }

    fn layer_index(&self, name: &str) -> Result<usize> {
        self.catalog
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = self.arch.input;
        if input.shape() != (s.channels, s.height, s.width) {
            return Err(Error::Input(format!(
                "input is {:?}, network expects {}x{}x{}",
                input.shape(),
                s.channels,
                s.height,
                s.width
            )));
        }
        Ok(())
    }

    fn run_layer(
        &self,
        index: usize,
        input: &Tensor,
    ) -> (Tensor, Option<Tensor>, Option<Vec<usize>>) {
        match &self.layers[index] {
            Layer::Conv(p) => {
                let mut z = conv3x3(input, &p.weight, &p.bias, p.out_channels);
                for v in z.as_mut_slice() {
                    *v = v.max(0.0);
                }
                if p.residual {
                    let mut out = z.clone();
                    for (o, &x) in out.as_mut_slice().iter_mut().zip(input.as_slice()) {
                        *o += x;
                    }
                    (out, Some(z), None)
                } else {
                    (z, None, None)
                }
            }
            Layer::MaxPool => {
                let (out, arg) = max_pool2(input);
                (out, None, Some(arg))
            }
        }
    }

    fn head(&self, last: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let n = last.plane_len() as f64;
        let pooled: Vec<f64> = (0..last.channels())
            .map(|c| last.plane(c).iter().sum::<f64>() / n)
            .collect();
        let c = pooled.len();
        let logits = (0..self.arch.class_count)
            .map(|j| {
                let row = &self.head_weight[j * c..(j + 1) * c];
                self.head_bias[j] + row.iter().zip(&pooled).map(|(w, p)| w * p).sum::<f64>()
            })
            .collect();
        (pooled, logits)
    }

    fn trace(&self, input: &Tensor) -> Trace {
        let n = self.layers.len();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(n);
        let mut relu = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        for i in 0..n {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let (out, r, a) = self.run_layer(i, x);
            outputs.push(out);
            relu.push(r);
            argmax.push(a);
        }
        let (pooled, logits) = self.head(outputs.last().expect("non-empty"));
        Trace {
            outputs,
            relu,
            argmax,
            pooled,
            logits,
        }
    }

    fn forward_logits(&self, input: &Tensor) -> Vec<f64> {
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            x = self.run_layer(i, &x).0;
        }
        self.head(&x).1
    }

    /// Re-runs the network from the output of the named layer onwards, with
    /// `activation` substituted for that layer's output.
    pub fn logits_from_layer(&self, layer: &str, activation: &Tensor) -> Result<Vec<f64>> {
        let idx = self.layer_index(layer)?;
        let l = &self.catalog[idx];
        if activation.shape() != (l.out_channels, l.out_height, l.out_width) {
            return Err(Error::Input(format!(
                "activation shape {:?} does not match {l}",
                activation.shape()
            )));
        }
        let mut x = activation.clone();
        for i in idx + 1..self.layers.len() {
            x = self.run_layer(i, &x).0;
        }
        Ok(self.head(&x).1)
    }

    /// Backpropagates `dlogits` from the head down to layer `stop`, calling
    /// `visit(i, grad)` with the gradient of every layer output passed on the
    /// way. Parameter gradients are accumulated into `params` when given.
    fn backward(
        &self,
        input: &Tensor,
        trace: &Trace,
        dlogits: &[f64],
        stop: usize,
        mut params: Option<&mut ParamTensors>,
        mut visit: impl FnMut(usize, &Tensor),
    ) {
        let last = trace.outputs.last().expect("non-empty");
        let c = last.channels();
        let k = self.arch.class_count;
        let mut dpooled = vec![0.0; c];
        for j in 0..k {
            let row = &self.head_weight[j * c..(j + 1) * c];
            for (d, w) in dpooled.iter_mut().zip(row) {
                *d += dlogits[j] * w;
            }
        }
        if let Some(p) = params.as_deref_mut() {
            let n = p.0.len();
            for j in 0..k {
                for ch in 0..c {
                    p.0[n - 2][j * c + ch] += dlogits[j] * trace.pooled[ch];
                }
                p.0[n - 1][j] += dlogits[j];
            }
        }
        let area = last.plane_len() as f64;
        let mut grad = Tensor::zeros(c, last.height(), last.width());
        for ch in 0..c {
            grad.plane_mut(ch).fill(dpooled[ch] / area);
        }

        // index of the weight tensor of each conv layer inside ParamTensors
        let mut slot = 0;
        let slots: Vec<usize> = self
            .layers
            .iter()
            .map(|l| {
                let s = slot;
                if matches!(l, Layer::Conv(_)) {
                    slot += 2;
                }
                s
            })
            .collect();

        for i in (stop..self.layers.len()).rev() {
            visit(i, &grad);
            let need_input_grad = i > stop;
            if !need_input_grad && params.is_none() {
                break;
            }
            let x = if i == 0 { input } else { &trace.outputs[i - 1] };
            grad = match &self.layers[i] {
                Layer::MaxPool => {
                    let arg = trace.argmax[i].as_ref().expect("pool argmax recorded");
                    max_pool2_backward(&grad, arg, x.height(), x.width())
                }
                Layer::Conv(p) => {
                    let relu_out = trace.relu[i].as_ref().unwrap_or(&trace.outputs[i]);
                    let mut gz = grad.clone();
                    for (g, &r) in gz.as_mut_slice().iter_mut().zip(relu_out.as_slice()) {
                        if r <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    if let Some(pt) = params.as_deref_mut() {
                        let s = slots[i];
                        let (w_slot, rest) = pt.0[s..].split_at_mut(1);
                        conv3x3_param_grad(x, &gz, &mut w_slot[0], &mut rest[0]);
                    }
                    if need_input_grad {
                        let mut gx = conv3x3_input_grad(&gz, &p.weight, p.in_channels);
                        if p.residual {
                            for (a, &b) in gx.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                                *a += b;
                            }
                        }
                        gx
                    } else {
                        grad
                    }
                }
            };
            if !need_input_grad {
                break;
            }
        }
    }

    /// Softmax cross-entropy against a target distribution. Returns the loss
    /// and accumulates parameter gradients into `grads`.
    pub fn accumulate_loss_gradient(
        &self,
        input: &Tensor,
        target: &[f64],
        grads: &mut ParamTensors,
    ) -> Result<f64> {
        self.check_input(input)?;
        if target.len() != self.arch.class_count {
            return Err(Error::Input(
                "target length differs from class count".into(),
            ));
        }
        let trace = self.trace(input);
        let p = super::softmax(&trace.logits);
        let loss = -target
            .iter()
            .zip(&p)
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, q)| t * q.max(1e-300).ln())
            .sum::<f64>();
        let dlogits: Vec<f64> = p.iter().zip(target).map(|(q, t)| q - t).collect();
        self.backward(input, &trace, &dlogits, 0, Some(grads), |_, _| {});
        Ok(loss)
    }

    /// Replaces the fresh-init weights of a layer by loaded values. The
    /// container loader checks shapes before calling this.
    pub(crate) fn set_parameters(&mut self, tensors: Vec<Vec<f64>>) -> Result<()> {
        let mut slots = self.parameters_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Integrity(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            if slot.len() != t.len() {
                return Err(Error::Integrity("parameter tensor size mismatch".into()));
            }
            **slot = t;
        }
        Ok(())
    }

    pub fn zero_head_class(&mut self, class_id: usize) {
        let c = self.final_channels();
        self.head_weight[class_id * c..(class_id + 1) * c].fill(0.0);
        self.head_bias[class_id] = 0.0;
    }
}

impl Backend for DeskCnn {
    fn identifier(&self) -> &str {
        &self.arch.identifier
    }

    fn input_shape(&self) -> InputShape {
        self.arch.input
    }

    fn class_count(&self) -> usize {
        self.arch.class_count
    }

    fn layer_catalog(&self) -> &[LayerRef] {
        &self.catalog
    }

    fn logits(&self, input: &Tensor) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.forward_logits(input))
    }

    fn logits_batch(&self, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        for t in inputs {
            self.check_input(t)?;
        }
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            Ok(inputs.par_iter().map(|t| self.forward_logits(t)).collect())
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(inputs.iter().map(|t| self.forward_logits(t)).collect())
        }
    }

    fn activations(&self, input: &Tensor, layers: &[LayerRef]) -> Result<Vec<Tensor>> {
        self.check_input(input)?;
        let idx: Vec<usize> = layers
            .iter()
            .map(|l| self.layer_index(&l.name))
            .collect::<Result<_>>()?;
        let trace = self.trace(input);
        Ok(idx.into_iter().map(|i| trace.outputs[i].clone()).collect())
    }

    fn probe(
        &self,
        input: &Tensor,
        layers: &[LayerRef],
        output_weights: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<LayerProbe> {
        self.check_input(input)?;
        let idx: Vec<usize> = layers
            .iter()
            .map(|l| self.layer_index(&l.name))
            .collect::<Result<_>>()?;
        let trace = self.trace(input);
        let dlogits = output_weights(&trace.logits);
        let mut gradients: Vec<Option<Tensor>> = vec![None; idx.len()];
        if let Some(&stop) = idx.iter().min() {
            self.backward(input, &trace, &dlogits, stop, None, |i, g| {
                for (slot, &want) in gradients.iter_mut().zip(&idx) {
                    if want == i {
                        *slot = Some(g.clone());
                    }
                }
            });
        }
        Ok(LayerProbe {
            activations: idx.iter().map(|&i| trace.outputs[i].clone()).collect(),
            gradients: gradients
                .into_iter()
                .map(|g| g.expect("every requested layer is visited"))
                .collect(),
            logits: trace.logits,
        })
    }

    fn parameter_layers(&self) -> Vec<String> {
        let mut names = vec!["head".to_string()];
        for (spec, layer) in self.arch.layers.iter().zip(&self.layers).rev() {
            if matches!(layer, Layer::Conv(_)) {
                names.push(spec.name().to_string());
            }
        }
        names
    }

    fn reinitialize_layer(&mut self, name: &str, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if name == "head" {
            let c = self.final_channels();
            let normal = Normal::new(0.0, (1.0 / c as f64).sqrt()).expect("valid std");
            for w in &mut self.head_weight {
                *w = normal.sample(&mut rng);
            }
            self.head_bias.fill(0.0);
            return Ok(());
        }
        let idx = self.layer_index(name)?;
        match &mut self.layers[idx] {
            Layer::Conv(p) => {
                let mut std = (2.0 / (p.in_channels * 9) as f64).sqrt();
                if p.residual {
                    std *= 0.5;
                }
                let normal = Normal::new(0.0, std).expect("valid std");
                for w in &mut p.weight {
                    *w = normal.sample(&mut rng);
                }
                p.bias.fill(0.0);
                Ok(())
            }
            Layer::MaxPool => Err(Error::Input(format!("layer `{name}` has no parameters"))),
        }
    }
}

fn conv3x3(input: &Tensor, weight: &[f64], bias: &[f64], out_channels: usize) -> Tensor {
    let (ic, h, w) = input.shape();
    let mut out = Tensor::zeros(out_channels, h, w);
    for o in 0..out_channels {
        let op = out.plane_mut(o);
        op.fill(bias[o]);
        for i in 0..ic {
            let ip = input.plane(i);
            let kern = &weight[(o * ic + i) * 9..(o * ic + i + 1) * 9];
            for ky in 0..3 {
                let (y0, y1) = valid_range(h, ky);
                for kx in 0..3 {
                    let wv = kern[ky * 3 + kx];
                    let (x0, x1) = valid_range(w, kx);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let orow = &mut op[y * w + x0..y * w + x1];
                        let irow = &ip[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output positions `[lo, hi)` along an axis of length `n` for which the
/// kernel tap `k` (offset `k - 1`) reads inside the input.
#[inline]
fn valid_range(n: usize, k: usize) -> (usize, usize) {
    match k {
        0 => (1.min(n), n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

fn conv3x3_param_grad(input: &Tensor, gz: &Tensor, dweight: &mut [f64], dbias: &mut [f64]) {
    let (ic, h, w) = input.shape();
    for o in 0..gz.channels() {
        let gp = gz.plane(o);
        dbias[o] += gp.iter().sum::<f64>();
        for i in 0..ic {
            let ip = input.plane(i);
            let kern = &mut dweight[(o * ic + i) * 9..(o * ic + i + 1) * 9];
            for ky in 0..3 {
                let (y0, y1) = valid_range(h, ky);
                for kx in 0..3 {
                    let (x0, x1) = valid_range(w, kx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let grow = &gp[y * w + x0..y * w + x1];
                        let irow = &ip[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    kern[ky * 3 + kx] += acc;
                }
            }
        }
    }
}

fn conv3x3_input_grad(gz: &Tensor, weight: &[f64], in_channels: usize) -> Tensor {
    let (oc, h, w) = gz.shape();
    let mut gx = Tensor::zeros(in_channels, h, w);
    for i in 0..in_channels {
        let xp = gx.plane_mut(i);
        for o in 0..oc {
            let gp = gz.plane(o);
            let kern = &weight[(o * in_channels + i) * 9..(o * in_channels + i + 1) * 9];
            for ky in 0..3 {
                let (y0, y1) = valid_range(h, ky);
                for kx in 0..3 {
                    let wv = kern[ky * 3 + kx];
                    let (x0, x1) = valid_range(w, kx);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let grow = &gp[y * w + x0..y * w + x1];
                        let xrow = &mut xp[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (a, b) in xrow.iter_mut().zip(grow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    gx
}

/// 2x2 stride-2 max pool. Ties go to the first element in raster order.
fn max_pool2(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let ip = input.plane(ch);
        let op = out.plane_mut(ch);
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (2 * y) * w + 2 * x;
                for idx in [best + 1, best + w, best + w + 1] {
                    if ip[idx] > ip[best] {
                        best = idx;
                    }
                }
                op[y * ow + x] = ip[best];
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn max_pool2_backward(grad: &Tensor, arg: &[usize], h: usize, w: usize) -> Tensor {
    let (c, oh, ow) = grad.shape();
    let mut gx = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let gp = grad.plane(ch);
        let xp = gx.plane_mut(ch);
        for (j, &g) in gp.iter().enumerate() {
            xp[arg[ch * oh * ow + j]] += g;
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> DeskArchitecture {
        DeskArchitecture::plain(
            "t",
            InputShape {
                channels: 2,
                height: 8,
                width: 8,
            },
            3,
            &[3, 4],
        )
    }

    fn naive_conv(input: &Tensor, weight: &[f64], bias: &[f64], oc: usize) -> Tensor {
        let (ic, h, w) = input.shape();
        let mut out = Tensor::zeros(oc, h, w);
        for o in 0..oc {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias[o];
                    for i in 0..ic {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * ic + i) * 3 + ky as usize) * 3 + kx as usize]
                                    * input.plane(i)[sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out.plane_mut(o)[y as usize * w + x as usize] = acc;
                }
            }
        }
        out
    }

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..c * h * w)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0)
            .collect();
        Tensor::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn shift_add_conv_matches_direct_sum() {
        let x = ramp(2, 5, 6);
        let weight: Vec<f64> = (0..3 * 2 * 9)
            .map(|i| ((i % 7) as f64 - 3.0) / 4.0)
            .collect();
        let bias = [0.1, -0.2, 0.3];
        let fast = conv3x3(&x, &weight, &bias, 3);
        let slow = naive_conv(&x, &weight, &bias, 3);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn catalog_tracks_shapes() {
        let cat = small_arch().catalog().unwrap();
        let dims: Vec<_> = cat
            .iter()
            .map(|l| (l.out_channels, l.out_height, l.out_width))
            .collect();
        assert_eq!(dims, [(3, 8, 8), (3, 4, 4), (4, 4, 4), (4, 2, 2)]);
    }

    #[test]
    fn residual_conv_needs_matching_channels() {
        let mut arch = small_arch();
        arch.layers[2] = DeskLayerSpec::Conv {
            name: "block2_conv".into(),
            out_channels: 4,
            residual: true,
        };
        assert!(matches!(arch.catalog(), Err(Error::Load(_))));
    }

    #[test]
    fn parameter_gradient_matches_finite_difference() {
        let net = DeskCnn::init(small_arch(), 7).unwrap();
        let x = ramp(2, 8, 8);
        let target = [0.2, 0.0, 0.8];
        let mut grads = net.zero_like_parameters();
        net.accumulate_loss_gradient(&x, &target, &mut grads)
            .unwrap();
        let loss_of = |n: &DeskCnn| {
            let mut g = n.zero_like_parameters();
            n.accumulate_loss_gradient(&x, &target, &mut g).unwrap()
        };
        for t in 0..grads.0.len() {
            for k in [0, grads.0[t].len() / 2, grads.0[t].len() - 1] {
                let mut hi = net.clone();
                hi.parameters_mut()[t][k] += 1e-6;
                let mut lo = net.clone();
                lo.parameters_mut()[t][k] -= 1e-6;
                let fd = (loss_of(&hi) - loss_of(&lo)) / 2e-6;
                let an = grads.0[t][k];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                    "tensor {t} entry {k}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn reinitialising_changes_only_that_layer() {
        let mut net = DeskCnn::init(small_arch(), 1).unwrap();
        let before = net.clone();
        net.reinitialize_layer("block2_conv", 99).unwrap();
        assert_eq!(net.parameters()[0], before.parameters()[0]);
        assert_ne!(net.parameters()[2], before.parameters()[2]);
        assert_eq!(
            net.parameter_layers(),
            ["head", "block2_conv", "block1_conv"]
        );
    }
}
