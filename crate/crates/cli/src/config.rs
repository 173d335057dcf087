//! Run configuration: a [`PipelineConfig`] plus optional named backend sets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vmfuq_core::backends::{BackendsConfig, SyntheticConfig};
use vmfuq_core::pipeline::PipelineConfig;

use crate::error::{CliError, Result};

/// Name of the built-in all-synthetic backend set.
pub const SYNTHETIC_SET: &str = "synthetic";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    /// Alternatives to `backends`, selected with `--backend-set`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub backend_sets: BTreeMap<String, BackendsConfig>,
}

impl CliConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// `load(path)` when given, the defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(CliConfig::default()), CliConfig::load)
    }

    /// The effective pipeline configuration after command-line overrides.
    pub fn resolve(&self, backend_set: Option<&str>, seed: Option<u64>) -> Result<PipelineConfig> {
        let mut cfg = self.pipeline.clone();
        if let Some(name) = backend_set {
            cfg.backends = match self.backend_sets.get(name) {
                Some(set) => set.clone(),
                None if name == SYNTHETIC_SET => BackendsConfig::synthetic(SyntheticConfig::default()),
                None => return Err(CliError::UnknownBackendSet(name.to_string())),
            };
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
