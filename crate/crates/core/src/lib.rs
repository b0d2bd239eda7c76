//! Visual explanations for CNN classifiers by semantic input sampling.
//!
//! The pipeline picks the last activation site of every convolutional block,
//! keeps the feature maps whose summed class-score gradient is positive,
//! turns them into smooth input masks, scores the model on the masked inputs
//! to build one visualization map per block, and fuses those maps through a
//! cascade of add-then-Otsu-gate blocks.

pub mod attribution;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sampling;

pub use error::{Error, Result};
pub use fusion::ExplanationMap;
pub use grid::Grid;
pub use model::{ModelHandle, Tensor};
