use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load model: {0}")]
    Load(String),

    #[error("weight container integrity check failed: {0}")]
    Integrity(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("backend does not support {0}")]
    Capability(String),

    #[error("mask has no positive mass")]
    DegenerateMask,

    #[error("no positive-gradient evidence at layer `{layer}`")]
    EmptyEvidence { layer: String },

    #[error("no layer produced usable attribution masks for class {class_id}")]
    ExplanationFailed { class_id: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed XMAP data: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 usage/config, 3 explanation failure,
    /// 4 backend capability, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::UnknownLayer(_) => 2,
            Error::ExplanationFailed { .. } | Error::EmptyEvidence { .. } => 3,
            Error::Capability(_) => 4,
            _ => 1,
        }
    }
}
