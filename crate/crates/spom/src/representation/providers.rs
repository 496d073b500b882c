//! Embedding providers: where feature blocks come from.

use crate::error::{Error, Result};
use crate::representation::{lrep, FeatureBlock, Phase, Provenance, SourceRegistry};
use crate::rng::{fnv1a64, SplitMix64};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Anything that can produce the feature block of a named source for an
/// episode phase.
///
/// Implementations must be deterministic per `(episode_id, phase,
/// source_id)` and safe for concurrent calls; wrap single-threaded inner
/// state in a mutex if necessary.
pub trait EmbeddingProvider: Send + Sync {
    fn get(&self, episode_id: &str, phase: &Phase, source_id: &str) -> Result<FeatureBlock>;
}

/// Path of a block inside a feature-store tree:
/// `<root>/<episode_id>/<phase>/<source_id>.lrep`.
pub fn block_path(root: &Path, episode_id: &str, phase: &Phase, source_id: &str) -> PathBuf {
    root.join(episode_id)
        .join(phase.dir_name().as_ref())
        .join(format!("{source_id}.lrep"))
}

/// Path of a caption sidecar: `<root>/<episode_id>/<phase>.caption.txt`.
pub fn caption_path(root: &Path, episode_id: &str, phase: &Phase) -> PathBuf {
    root.join(episode_id)
        .join(format!("{}.caption.txt", phase.dir_name()))
}

/// Precomputed embeddings on disk.
#[derive(Debug, Clone)]
pub struct FileProvider {
    root: PathBuf,
}

impl FileProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Caption text for an image phase.
    pub fn caption_text(&self, episode_id: &str, phase: &Phase) -> Result<String> {
        let path = caption_path(&self.root, episode_id, phase);
        std::fs::read_to_string(&path).map_err(|_| Error::MissingCaption {
            episode_id: episode_id.to_string(),
            phase: phase.dir_name().into_owned(),
        })
    }

    pub fn store_block(&self, episode_id: &str, phase: &Phase, block: &FeatureBlock) -> Result<()> {
        lrep::write_block(&block_path(&self.root, episode_id, phase, &block.source_id), block)
    }

    pub fn store_caption(&self, episode_id: &str, phase: &Phase, text: &str) -> Result<()> {
        let path = caption_path(&self.root, episode_id, phase);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

impl EmbeddingProvider for FileProvider {
    fn get(&self, episode_id: &str, phase: &Phase, source_id: &str) -> Result<FeatureBlock> {
        let path = block_path(&self.root, episode_id, phase, source_id);
        if !path.exists() {
            return Err(Error::MissingFeature {
                episode_id: episode_id.to_string(),
                phase: phase.dir_name().into_owned(),
                source_id: source_id.to_string(),
            });
        }
        lrep::read_block(&path)
    }
}

/// In-memory feature store. The synthetic generator fills one of these;
/// `write_to_dir` dumps it in the on-disk layout.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    blocks: BTreeMap<(String, String, String), FeatureBlock>,
    captions: BTreeMap<(String, String), String>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, episode_id: &str, phase: &Phase, block: FeatureBlock) {
        self.blocks.insert(
            (
                episode_id.to_string(),
                phase.dir_name().into_owned(),
                block.source_id.clone(),
            ),
            block,
        );
    }

    pub fn insert_caption(&mut self, episode_id: &str, phase: &Phase, text: impl Into<String>) {
        self.captions
            .insert((episode_id.to_string(), phase.dir_name().into_owned()), text.into());
    }

    pub fn caption(&self, episode_id: &str, phase: &Phase) -> Option<&str> {
        self.captions
            .get(&(episode_id.to_string(), phase.dir_name().into_owned()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Write every block and caption under `root` in the standard layout.
    pub fn write_to_dir(&self, root: &Path) -> Result<()> {
        for ((episode, phase, source), block) in &self.blocks {
            let path = root.join(episode).join(phase).join(format!("{source}.lrep"));
            lrep::write_block(&path, block)?;
        }
        for ((episode, phase), text) in &self.captions {
            let path = root.join(episode).join(format!("{phase}.caption.txt"));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, text)?;
        }
        Ok(())
    }
}

impl EmbeddingProvider for MemoryStore {
    fn get(&self, episode_id: &str, phase: &Phase, source_id: &str) -> Result<FeatureBlock> {
        self.blocks
            .get(&(
                episode_id.to_string(),
                phase.dir_name().into_owned(),
                source_id.to_string(),
            ))
            .cloned()
            .ok_or_else(|| Error::MissingFeature {
                episode_id: episode_id.to_string(),
                phase: phase.dir_name().into_owned(),
                source_id: source_id.to_string(),
            })
    }
}

/// Deterministic pseudo-random blocks, for tests and desk experiments.
/// The same `(seed, episode, phase, source)` always yields the same bytes.
#[derive(Debug, Clone)]
pub struct SeededProvider {
    seed: u64,
    registry: SourceRegistry,
}

impl SeededProvider {
    pub fn new(seed: u64, registry: SourceRegistry) -> Self {
        Self { seed, registry }
    }
}

impl EmbeddingProvider for SeededProvider {
    fn get(&self, episode_id: &str, phase: &Phase, source_id: &str) -> Result<FeatureBlock> {
        let dim = self.registry.dim_of(source_id).ok_or_else(|| {
            Error::Config(format!("source '{source_id}' not in registry"))
        })?;
        let key = format!("{}|{}|{}|{}", self.seed, episode_id, phase.dir_name(), source_id);
        let mut rng = SplitMix64::new(fnv1a64(key.as_bytes()));
        let values = (0..dim).map(|_| rng.next_symmetric(1.0) as f32).collect();
        Ok(FeatureBlock {
            source_id: source_id.to_string(),
            dim,
            values,
            provenance: Provenance::Synthetic,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn file_provider_round_trip() {
        let dir = tempdir().unwrap();
        let provider = FileProvider::new(dir.path());
        let block = FeatureBlock::new("vit", vec![1.0, -2.0, 0.5], Provenance::Synthetic).unwrap();
        provider.store_block("ep9", &Phase::After, &block).unwrap();
        let back = provider.get("ep9", &Phase::After, "vit").unwrap();
        assert_eq!(back.values, block.values);
        assert_eq!(back.provenance, Provenance::File);
    }

    #[test]
    fn missing_feature_names_episode_and_source() {
        let dir = tempdir().unwrap();
        let provider = FileProvider::new(dir.path());
        let err = provider.get("ep1", &Phase::Before, "vit").unwrap_err().to_string();
        assert!(err.contains("ep1"), "{err}");
        assert!(err.contains("vit"), "{err}");
    }

    #[test]
    fn caption_sidecar_round_trip() {
        let dir = tempdir().unwrap();
        let provider = FileProvider::new(dir.path());
        provider
            .store_caption("ep1", &Phase::Before, "In the image, a mug.")
            .unwrap();
        assert_eq!(
            provider.caption_text("ep1", &Phase::Before).unwrap(),
            "In the image, a mug."
        );
        assert!(matches!(
            provider.caption_text("ep1", &Phase::After),
            Err(Error::MissingCaption { .. })
        ));
    }

    #[test]
    fn memory_store_dumps_standard_layout() {
        let dir = tempdir().unwrap();
        let mut store = MemoryStore::new();
        let block = FeatureBlock::new("vit", vec![0.5; 4], Provenance::Synthetic).unwrap();
        store.insert("e1", &Phase::Before, block.clone());
        store.insert_caption("e1", &Phase::Before, "caption text");
        store.write_to_dir(dir.path()).unwrap();

        let file_provider = FileProvider::new(dir.path());
        let back = file_provider.get("e1", &Phase::Before, "vit").unwrap();
        assert_eq!(back.values, block.values);
        assert_eq!(
            file_provider.caption_text("e1", &Phase::Before).unwrap(),
            "caption text"
        );
    }

    #[test]
    fn video_frame_phases_have_distinct_paths() {
        let root = Path::new("/store");
        let p0 = block_path(root, "e", &Phase::Named("frame_0".into()), "vit");
        let p1 = block_path(root, "e", &Phase::Named("frame_1".into()), "vit");
        assert_ne!(p0, p1);
        assert!(p0.ends_with("e/frame_0/vit.lrep"));
    }
}
