//! Everything around the algorithm: run configuration, datasets, training,
//! persistence and the explain / eval / ablate / sanity / bench drivers.

pub mod ablate;
pub mod bench;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod explain;
pub mod report;
pub mod sanity;
pub mod synthetic;
pub mod train;
pub mod xmap;

pub use config::{ClassSelection, Method, RunConfig};

use crate::error::{Error, Result};
use crate::model::ModelHandle;

/// Loads the configured model, applying any score-surface override.
pub fn open_model(config: &RunConfig) -> Result<ModelHandle> {
    if config.model.as_os_str().is_empty() {
        return Err(Error::Config("no model descriptor given".into()));
    }
    let mut model = crate::model::load(&config.model)?;
    if let Some(surface) = config.score_surface {
        model.set_surface(surface);
    }
    Ok(model)
}

pub fn open_dataset(config: &RunConfig) -> Result<dataset::Dataset> {
    let root = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset directory given".into()))?;
    dataset::Dataset::open(root)
}
