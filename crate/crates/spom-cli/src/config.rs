//! Config-file handling and flag merging.
//!
//! Precedence, lowest to highest: named profile, `--config` file sections,
//! explicit flags.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spom::harness::TrainConfig;
use spom::representation::{register_sources, RegistryConfig, SourceRegistry};
use std::path::Path;

/// Optional sections of a `--config` file. The train section may be
/// partial: it overlays the named profile field by field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub train: Option<serde_json::Value>,
    pub registry: Option<RegistryConfig>,
}

pub fn load_pipeline_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn profile(name: &str) -> Result<TrainConfig> {
    match name {
        "desk" => Ok(TrainConfig::desk()),
        "paper" => Ok(TrainConfig::paper()),
        other => bail!("unknown profile '{other}' (expected desk or paper)"),
    }
}

/// The fully resolved configuration `train` writes next to its outputs so
/// that `eval` and `video` can verify the checkpoint digest later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub train: TrainConfig,
    pub registry: RegistryConfig,
    pub digest: u64,
}

impl EffectiveConfig {
    pub fn new(train: TrainConfig, registry: &SourceRegistry) -> Self {
        let digest = spom::harness::config_digest(&train, registry);
        Self {
            train,
            registry: registry.config().clone(),
            digest,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading run config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing run config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn registry(&self) -> Result<SourceRegistry> {
        Ok(register_sources(self.registry.clone())?)
    }
}

pub fn load_registry(path: &Path) -> Result<SourceRegistry> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading registry {}", path.display()))?;
    let config: RegistryConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing registry {}", path.display()))?;
    Ok(register_sources(config)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
