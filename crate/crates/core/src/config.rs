//! Resolved run configuration. Every section has defaults, so a config file
//! only needs the keys it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::SimilarityKind;
use crate::coarse::CoarseConfig;
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, TrainConfig};
use crate::quality::QualityConfig;
use crate::ssl::AugmentConfig;
use crate::synthetic::SyntheticConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub similarity: SimilarityKind,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            similarity: SimilarityKind::Loss,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub quality: QualityConfig,
    pub coarse: CoarseConfig,
    pub clustering: ClusteringConfig,
    pub synthetic: SyntheticConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.quality.validate()?;
        self.coarse.validate()?;
        self.synthetic.validate()
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 4, "train": {"ssl_iterations": 1}}"#).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.ssl_iterations, 1);
        assert_eq!(cfg.train.epochs_first, 30);
        assert_eq!(cfg.clustering.similarity, SimilarityKind::Loss);
    }

    #[test]
    fn round_trip_and_unknown_keys() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(RunConfig::from_json(r#"{"sead": 1}"#).is_err());
    }
}
