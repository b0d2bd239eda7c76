//! Model descriptors and the flat weight container.
//!
//! A descriptor is a JSON manifest naming the backend, the preprocessing and
//! (for the desk CNN) the architecture plus a table of parameter tensors
//! `{name, shape, offset}`. Offsets are byte offsets into a separate blob of
//! little-endian IEEE-754 `f32` values, row-major with channels outermost.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::desk::{DeskArchitecture, DeskCnn};
use super::{Backend, ModelHandle, ScoreSurface, Tensor};
use crate::error::{Error, Result};

pub const DESK_BACKEND: &str = "desk-cnn";
pub const MANIFEST_FORMAT: &str = "sise-weights/1";

/// Per-channel `(x / 255 - mean) / std` applied to 8-bit images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Preprocessing {
    pub fn identity(channels: usize) -> Self {
        Preprocessing {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, image: &RgbImage) -> Result<Tensor> {
        if self.mean.len() != 3 || self.std.len() != 3 {
            return Err(Error::Config(
                "RGB preprocessing needs 3 channel constants".into(),
            ));
        }
        let (w, h) = image.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, px) in image.enumerate_pixels() {
            for c in 0..3 {
                let v = px.0[c] as f64 / 255.0;
                data[c * h * w + y as usize * w + x as usize] = (v - self.mean[c]) / self.std[c];
            }
        }
        Tensor::from_vec(3, h, w, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the weight blob.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub format: String,
    pub backend: String,
    #[serde(default)]
    pub score_surface: ScoreSurface,
    pub preprocessing: Preprocessing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub architecture: DeskArchitecture,
    /// Path of the weight blob, relative to the manifest.
    pub weights: PathBuf,
    pub tensors: Vec<TensorEntry>,
    /// Directory the manifest was read from; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ModelDescriptor {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut d: ModelDescriptor = serde_json::from_str(&text)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        d.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(d)
    }

    pub fn weights_path(&self) -> PathBuf {
        self.base_dir.join(&self.weights)
    }
}

/// Builds a handle from a descriptor. Deterministic: the same descriptor and
/// blob always produce bitwise-identical forward outputs.
pub fn load_model(descriptor: &ModelDescriptor) -> Result<ModelHandle> {
    if descriptor.format != MANIFEST_FORMAT {
        return Err(Error::Load(format!(
            "unsupported manifest format `{}`",
            descriptor.format
        )));
    }
    if descriptor.backend != DESK_BACKEND {
        return Err(Error::Load(format!(
            "backend `{}` is not available; supported: {DESK_BACKEND}",
            descriptor.backend
        )));
    }
    let path = descriptor.weights_path();
    let blob = fs::read(&path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let net = desk_from_blob(descriptor, &blob)?;
    Ok(ModelHandle::new(Box::new(net))
        .with_surface(descriptor.score_surface)
        .with_preprocessing(descriptor.preprocessing.clone()))
}

fn desk_from_blob(descriptor: &ModelDescriptor, blob: &[u8]) -> Result<DeskCnn> {
    let mut net = DeskCnn::init(descriptor.architecture.clone(), 0)?;
    let expected = net.parameter_shapes();
    if expected.len() != descriptor.tensors.len() {
        return Err(Error::Integrity(format!(
            "architecture has {} parameter tensors, manifest lists {}",
            expected.len(),
            descriptor.tensors.len()
        )));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    let mut consumed = 0u64;
    for ((name, shape), entry) in expected.iter().zip(&descriptor.tensors) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Integrity(format!(
                "manifest entry `{}` {:?} does not match architecture tensor `{name}` {:?}",
                entry.name, entry.shape, shape
            )));
        }
        let count: usize = shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 4 * count;
        if end > blob.len() {
            return Err(Error::Integrity(format!(
                "tensor `{name}` needs bytes {start}..{end}, blob has {}",
                blob.len()
            )));
        }
        tensors.push(
            blob[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
        );
        consumed += 4 * count as u64;
    }
    if consumed != blob.len() as u64 {
        return Err(Error::Integrity(format!(
            "blob has {} bytes, manifest accounts for {consumed}",
            blob.len()
        )));
    }
    net.set_parameters(tensors)?;
    Ok(net)
}

/// Writes `manifest.json` and `weights.bin` into `dir` and returns the
/// manifest path. Parameters are rounded to `f32`.
pub fn save_desk_model(
    net: &DeskCnn,
    preprocessing: &Preprocessing,
    surface: ScoreSurface,
    class_names: Option<Vec<String>>,
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for ((name, shape), values) in net.parameter_shapes().into_iter().zip(net.parameters()) {
        entries.push(TensorEntry {
            name,
            shape,
            offset: blob.len() as u64,
        });
        for &v in values {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let weights = PathBuf::from("weights.bin");
    fs::write(dir.join(&weights), &blob).map_err(|e| Error::io(dir.join(&weights), e))?;
    let descriptor = ModelDescriptor {
        format: MANIFEST_FORMAT.into(),
        backend: DESK_BACKEND.into(),
        score_surface: surface,
        preprocessing: preprocessing.clone(),
        class_names,
        architecture: net.architecture().clone(),
        weights,
        tensors: entries,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&descriptor)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Rounds every parameter through `f32`, matching what a save/load
/// round-trip produces.
pub fn quantize_to_f32(net: &mut DeskCnn) {
    for p in net.parameters_mut() {
        for v in p.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

impl ModelHandle {
    /// Preprocesses an 8-bit RGB image with this model's constants.
    pub fn preprocess(&self, image: &RgbImage) -> Result<Tensor> {
        let t = self.preprocessing().apply(image)?;
        let s = self.input_shape();
        if (t.height(), t.width()) != (s.height, s.width) {
            return Err(Error::Input(format!(
                "image is {}x{}, model expects {}x{}",
                t.height(),
                t.width(),
                s.height,
                s.width
            )));
        }
        Ok(t)
    }

    pub fn from_desk(net: DeskCnn) -> Self {
        let c = net.input_shape().channels;
        ModelHandle::new(Box::new(net)).with_preprocessing(Preprocessing::identity(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InputShape;

    fn tiny() -> DeskCnn {
        let arch = DeskArchitecture::plain(
            "tiny",
            InputShape {
                channels: 3,
                height: 8,
                width: 8,
            },
            4,
            &[4, 4],
        );
        let mut net = DeskCnn::init(arch, 3).unwrap();
        quantize_to_f32(&mut net);
        net
    }

    #[test]
    fn save_then_load_reproduces_forward() {
        let dir = tempfile::tempdir().unwrap();
        let net = tiny();
        let path = save_desk_model(
            &net,
            &Preprocessing::identity(3),
            ScoreSurface::Logit,
            None,
            dir.path(),
        )
        .unwrap();
        let a = crate::model::load(&path).unwrap();
        let b = crate::model::load(&path).unwrap();
        let x = Tensor::from_vec(3, 8, 8, (0..192).map(|i| (i as f64).sin()).collect()).unwrap();
        let fa = a.forward(&x).unwrap();
        assert_eq!(fa, b.forward(&x).unwrap());
        assert_eq!(fa, net.logits(&x).unwrap());
        assert_eq!(a.class_count(), 4);
    }

    #[test]
    fn truncated_blob_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_desk_model(
            &tiny(),
            &Preprocessing::identity(3),
            ScoreSurface::Logit,
            None,
            dir.path(),
        )
        .unwrap();
        let blob_path = dir.path().join("weights.bin");
        let blob = fs::read(&blob_path).unwrap();
        fs::write(&blob_path, &blob[..blob.len() - 10]).unwrap();
        assert!(matches!(
            crate::model::load(&path),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_desk_model(
            &tiny(),
            &Preprocessing::identity(3),
            ScoreSurface::Logit,
            None,
            dir.path(),
        )
        .unwrap();
        let mut d = ModelDescriptor::read(&path).unwrap();
        d.tensors[0].shape = vec![4, 3, 3, 2];
        assert!(matches!(load_model(&d), Err(Error::Integrity(_))));
    }

    #[test]
    fn missing_blob_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_desk_model(
            &tiny(),
            &Preprocessing::identity(3),
            ScoreSurface::Logit,
            None,
            dir.path(),
        )
        .unwrap();
        fs::remove_file(dir.path().join("weights.bin")).unwrap();
        assert!(matches!(crate::model::load(&path), Err(Error::Load(_))));
    }
}
