//! Pipeline configuration: one TOML-serializable struct aggregating every
//! stage's parameters, with unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterConfig;
use crate::error::{Error, Result};
use crate::extraction::ExtractionConfig;
use crate::lane_builder::SearchConfig;
use crate::odr::ExportConfig;
use crate::topology::TopologyConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub extraction: ExtractionConfig,
    pub clustering: ClusterConfig,
    pub search: SearchConfig,
    pub topology: TopologyConfig,
    pub export: ExportConfig,
    /// Sampling step for map evaluation, meters.
    pub eval_step: f64,
    /// Global seed; stage RNG seeds are derived from it unless set
    /// explicitly in the config file.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = PipelineConfig {
            extraction: ExtractionConfig::default(),
            clustering: ClusterConfig::default(),
            search: SearchConfig::default(),
            topology: TopologyConfig::default(),
            export: ExportConfig::default(),
            eval_step: 1.0,
            seed: 0,
        };
        cfg.set_global_seed(0);
        cfg
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Derive per-stage RNG seeds from one global seed.
    pub fn set_global_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.extraction.rng_seed = seed.wrapping_add(0x9e37_79b9);
        self.clustering.rng_seed = seed.wrapping_add(0x7f4a_7c15);
    }

    pub fn validate(&self) -> Result<()> {
        self.extraction.validate()?;
        self.clustering.validate()?;
        self.search.validate()?;
        self.topology.validate()?;
        self.export.validate()?;
        if self.eval_step <= 0.0 {
            return Err(Error::Config("eval_step must be positive".into()));
        }
        Ok(())
    }
}
