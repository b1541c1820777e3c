//! TOML run configuration. Every section and key is optional.
//!
//! ```toml
//! seed = 7
//!
//! [decoder]
//! threshold = 128
//! mode = "circle"
//!
//! [cluster]
//! k = 8
//! outlier_percentile = 0.95
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::court::CourtModel;
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::heatmap::HeatmapSpec;
use crate::imu::SegmentParams;
use crate::pose::ClusterParams;
use crate::rally::HitParams;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Clustering seed; `--seed` overrides it.
    pub seed: Option<u64>,
    pub heatmap: HeatmapSpec,
    pub decoder: DecoderConfig,
    pub court: CourtModel,
    pub cluster: ClusterParams,
    pub hits: HitParams,
    pub imu: SegmentParams,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Spec(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.heatmap.validate()?;
        self.decoder.validate()?;
        self.court.validate()
    }
}
