use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ScoreSurface;
use crate::sampling::{RiseConfig, SamplingOptions, DEFAULT_BATCH_SIZE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Sise,
    Rise,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sise" => Ok(Method::Sise),
            "rise" => Ok(Method::Rise),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected sise or rise)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sise => "sise",
            Method::Rise => "rise",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSelection {
    /// Every ground-truth label of every image.
    #[default]
    AllGroundTruth,
    Ids(Vec<usize>),
}

impl ClassSelection {
    pub fn admits(&self, class_id: usize) -> bool {
        match self {
            ClassSelection::AllGroundTruth => true,
            ClassSelection::Ids(ids) => ids.contains(&class_id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: PathBuf,
    pub data: Option<PathBuf>,
    pub classes: ClassSelection,
    pub mu: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub method: Method,
    /// Overrides the descriptor's surface for gradients and sampling.
    pub score_surface: Option<ScoreSurface>,
    /// Surface used by Drop% / Increase%.
    pub metric_surface: ScoreSurface,
    pub rise_masks: usize,
    pub baseline: f64,
    /// Evaluate at most this many test images.
    pub limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: PathBuf::new(),
            data: None,
            classes: ClassSelection::AllGroundTruth,
            mu: 0.0,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            out: PathBuf::from("out"),
            method: Method::Sise,
            score_surface: None,
            metric_surface: ScoreSurface::Probability,
            rise_masks: RiseConfig::default().mask_count,
            baseline: 0.0,
            limit: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::Config(format!(
                "mu must be a non-negative number, got {}",
                self.mu
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.rise_masks == 0 {
            return Err(Error::Config("RISE mask count must be positive".into()));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingOptions {
        SamplingOptions {
            batch_size: self.batch_size,
            baseline: self.baseline,
        }
    }

    pub fn rise(&self) -> RiseConfig {
        RiseConfig {
            mask_count: self.rise_masks,
            seed: self.seed,
            ..RiseConfig::default()
        }
    }

    /// SHA-256 of the configuration with the output directory blanked, so
    /// identical runs written to different places share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
