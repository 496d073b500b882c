//! Multi-level feature assembly.
//!
//! One image is represented by three groups of embedding blocks, each
//! produced by named external sources:
//!
//! * **scene** — backbone features that preserve local visual detail;
//! * **aligned** — image features living in a language-aligned space;
//! * **narrative** — text-embedder features of a caption describing the
//!   image.
//!
//! Each block becomes one token: the raw vector is linearly projected
//! (trainable, per source) to a shared model width and the tokens are
//! stacked scene, then aligned, then narrative. Disabling a group shrinks
//! the token sequence; nothing is zero-filled. The instruction gets the
//! same treatment through its own source list.

mod lrep;
mod providers;
mod remote;

pub use lrep::{read_block, write_block};
pub use providers::{
    block_path, caption_path, EmbeddingProvider, FileProvider, MemoryStore, SeededProvider,
};
pub use remote::{ManifestPayloads, Payload, PayloadSource, RemoteProvider};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, NodeId, Tape};
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::collections::BTreeSet;
use std::ops::Range;

/// Where a block's values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    File,
    Synthetic,
    Remote,
}

/// One embedding vector from one named external source.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub source_id: String,
    pub dim: usize,
    pub values: Vec<f32>,
    pub provenance: Provenance,
}

impl FeatureBlock {
    pub fn new(source_id: impl Into<String>, values: Vec<f32>, provenance: Provenance) -> Result<Self> {
        let source_id = source_id.into();
        if values.is_empty() {
            return Err(Error::Config(format!("source '{source_id}': empty block")));
        }
        Ok(Self {
            source_id,
            dim: values.len(),
            values,
            provenance,
        })
    }
}

/// Which point in an episode a feature belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Before,
    After,
    Instruction,
    CaptionBefore,
    CaptionAfter,
    /// Extra phases, e.g. video frames (`frame_3`).
    Named(String),
}

impl Phase {
    pub fn dir_name(&self) -> Cow<'_, str> {
        match self {
            Phase::Before => Cow::Borrowed("before"),
            Phase::After => Cow::Borrowed("after"),
            Phase::Instruction => Cow::Borrowed("instruction"),
            Phase::CaptionBefore => Cow::Borrowed("caption_before"),
            Phase::CaptionAfter => Cow::Borrowed("caption_after"),
            Phase::Named(s) => Cow::Borrowed(s),
        }
    }

    /// The caption phase paired with an image phase.
    pub fn caption_of(&self) -> Phase {
        match self {
            Phase::Before => Phase::CaptionBefore,
            Phase::After => Phase::CaptionAfter,
            Phase::Named(s) => Phase::Named(format!("caption_{s}")),
            other => other.clone(),
        }
    }

    pub fn parse(s: &str) -> Phase {
        match s {
            "before" => Phase::Before,
            "after" => Phase::After,
            "instruction" => Phase::Instruction,
            "caption_before" => Phase::CaptionBefore,
            "caption_after" => Phase::CaptionAfter,
            other => Phase::Named(other.to_string()),
        }
    }
}

/// Representation groups that can be toggled in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Scene,
    Aligned,
    Narrative,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Scene, Group::Aligned, Group::Narrative];

    /// Short label used in tables and on the command line.
    pub fn label(&self) -> &'static str {
        match self {
            Group::Scene => "SR",
            Group::Aligned => "AR",
            Group::Narrative => "NR",
        }
    }

    pub fn parse(s: &str) -> Result<Group> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SR" | "SCENE" => Ok(Group::Scene),
            "AR" | "ALIGNED" => Ok(Group::Aligned),
            "NR" | "NARRATIVE" => Ok(Group::Narrative),
            other => Err(Error::Config(format!("unknown group '{other}'"))),
        }
    }
}

/// Declaration of one embedding source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub id: String,
    pub dim: usize,
}

impl SourceSpec {
    pub fn new(id: impl Into<String>, dim: usize) -> Self {
        Self { id: id.into(), dim }
    }
}

/// Source lists per group, in assembly order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryConfig {
    pub scene: Vec<SourceSpec>,
    pub aligned: Vec<SourceSpec>,
    pub narrative: Vec<SourceSpec>,
    pub instruction: Vec<SourceSpec>,
}

impl Default for RegistryConfig {
    /// Dims sized for the public backbone families each source id names.
    /// These are configuration defaults, not measured facts.
    fn default() -> Self {
        Self {
            scene: vec![
                SourceSpec::new("vit", 768),
                SourceSpec::new("dinov2", 768),
                SourceSpec::new("clip_image_intermediate", 1024),
            ],
            aligned: vec![SourceSpec::new("clip_image_output", 512)],
            narrative: vec![
                SourceSpec::new("bert_caption", 768),
                SourceSpec::new("te3l_caption", 3072),
            ],
            instruction: vec![
                SourceSpec::new("bert_instruction", 768),
                SourceSpec::new("clip_text", 512),
                SourceSpec::new("ada_instruction", 1536),
            ],
        }
    }
}

/// Immutable, validated source registry consulted by every assembler.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRegistry {
    config: RegistryConfig,
}

/// Validate a configuration into a registry: ids unique across all groups,
/// every dim positive.
pub fn register_sources(config: RegistryConfig) -> Result<SourceRegistry> {
    let mut seen = BTreeSet::new();
    for spec in config
        .scene
        .iter()
        .chain(&config.aligned)
        .chain(&config.narrative)
        .chain(&config.instruction)
    {
        if spec.dim == 0 {
            return Err(Error::Config(format!("source '{}' has dim 0", spec.id)));
        }
        if !seen.insert(spec.id.clone()) {
            return Err(Error::Config(format!("duplicate source id '{}'", spec.id)));
        }
    }
    Ok(SourceRegistry { config })
}

impl SourceRegistry {
    pub fn standard() -> Self {
        register_sources(RegistryConfig::default()).expect("default config is valid")
    }

    pub fn scene(&self) -> &[SourceSpec] {
        &self.config.scene
    }

    pub fn aligned(&self) -> &[SourceSpec] {
        &self.config.aligned
    }

    pub fn narrative(&self) -> &[SourceSpec] {
        &self.config.narrative
    }

    pub fn instruction(&self) -> &[SourceSpec] {
        &self.config.instruction
    }

    pub fn group(&self, group: Group) -> &[SourceSpec] {
        match group {
            Group::Scene => self.scene(),
            Group::Aligned => self.aligned(),
            Group::Narrative => self.narrative(),
        }
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn total_sources(&self) -> usize {
        self.config.scene.len()
            + self.config.aligned.len()
            + self.config.narrative.len()
            + self.config.instruction.len()
    }

    /// All image-group sources paired with their group, in token order.
    pub fn image_sources(&self) -> impl Iterator<Item = (Group, &SourceSpec)> {
        Group::ALL
            .into_iter()
            .flat_map(move |g| self.group(g).iter().map(move |s| (g, s)))
    }

    pub fn dim_of(&self, source_id: &str) -> Option<usize> {
        self.config
            .scene
            .iter()
            .chain(&self.config.aligned)
            .chain(&self.config.narrative)
            .chain(&self.config.instruction)
            .find(|s| s.id == source_id)
            .map(|s| s.dim)
    }

    /// Copy of the registry with the disabled image groups emptied.
    /// Instruction sources are always kept.
    pub fn with_groups(&self, enabled: &BTreeSet<Group>) -> SourceRegistry {
        let keep = |g: Group, v: &[SourceSpec]| -> Vec<SourceSpec> {
            if enabled.contains(&g) {
                v.to_vec()
            } else {
                Vec::new()
            }
        };
        SourceRegistry {
            config: RegistryConfig {
                scene: keep(Group::Scene, &self.config.scene),
                aligned: keep(Group::Aligned, &self.config.aligned),
                narrative: keep(Group::Narrative, &self.config.narrative),
                instruction: self.config.instruction.clone(),
            },
        }
    }
}

/// Prompt used to produce image captions for the narrative group. Shipped
/// as a stored asset for whoever runs the captioning model; nothing in this
/// crate generates captions.
pub const CAPTION_PROMPT: &str = "Give a clear, comprehensive and detailed description of the state of the objects shown in this image. For each object, mention their colors, sizes, shapes, how they are placed (upright, etc.), position within the image and relative position to other objects.\nBegin with the phrase 'In the image,'.\nOnly use information that can be gained from the image.\nMention the objects that appear in the sentence string below. If the objects in the sentence string are not present in the image, mention that they are not present.\nSentence string: '{instruction}' .";

/// Render the caption prompt for one instruction.
pub fn caption_prompt_for(instruction: &str) -> String {
    CAPTION_PROMPT.replace("{instruction}", instruction)
}

fn fetch_group(
    provider: &dyn EmbeddingProvider,
    sources: &[SourceSpec],
    episode_id: &str,
    phase: &Phase,
) -> Result<Vec<FeatureBlock>> {
    let mut blocks = Vec::with_capacity(sources.len());
    for spec in sources {
        let block = provider.get(episode_id, phase, &spec.id)?;
        if block.dim != spec.dim {
            return Err(Error::Config(format!(
                "source '{}' returned dim {} but registry declares {}",
                spec.id, block.dim, spec.dim
            )));
        }
        blocks.push(block);
    }
    Ok(blocks)
}

/// Scene blocks for one image phase, in registry order.
pub fn assemble_scene(
    provider: &dyn EmbeddingProvider,
    registry: &SourceRegistry,
    episode_id: &str,
    phase: &Phase,
) -> Result<Vec<FeatureBlock>> {
    fetch_group(provider, registry.scene(), episode_id, phase)
}

/// Aligned blocks for one image phase, in registry order.
pub fn assemble_aligned(
    provider: &dyn EmbeddingProvider,
    registry: &SourceRegistry,
    episode_id: &str,
    phase: &Phase,
) -> Result<Vec<FeatureBlock>> {
    fetch_group(provider, registry.aligned(), episode_id, phase)
}

/// Narrative blocks embed the caption text of an image phase, never the
/// image itself. A missing embedding surfaces as a missing caption.
pub fn assemble_narrative(
    provider: &dyn EmbeddingProvider,
    registry: &SourceRegistry,
    episode_id: &str,
    phase: &Phase,
) -> Result<Vec<FeatureBlock>> {
    let caption_phase = phase.caption_of();
    fetch_group(provider, registry.narrative(), episode_id, &caption_phase).map_err(|e| match e {
        Error::MissingFeature { episode_id, .. } => Error::MissingCaption {
            episode_id,
            phase: phase.dir_name().into_owned(),
        },
        other => other,
    })
}

/// Instruction blocks, in registry order.
pub fn assemble_instruction(
    provider: &dyn EmbeddingProvider,
    registry: &SourceRegistry,
    episode_id: &str,
) -> Result<Vec<FeatureBlock>> {
    fetch_group(provider, registry.instruction(), episode_id, &Phase::Instruction)
}

/// Token-index ranges of each group inside an assembled representation.
/// The ranges partition `0..token_count` in scene, aligned, narrative order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMap {
    pub scene: Range<usize>,
    pub aligned: Range<usize>,
    pub narrative: Range<usize>,
}

impl BlockMap {
    pub fn token_count(&self) -> usize {
        self.narrative.end
    }
}

/// The assembled multi-level representation of one image: a token matrix
/// on the tape plus the group structure of its rows.
#[derive(Debug, Clone)]
pub struct LambdaRepresentation {
    pub tokens: NodeId,
    pub block_map: BlockMap,
}

/// The instruction's token matrix on the tape.
#[derive(Debug, Clone)]
pub struct LanguageFeature {
    pub tokens: NodeId,
    pub token_count: usize,
}

fn project_blocks(
    tape: &mut Tape,
    projections: &dyn Fn(&str) -> Option<NodeId>,
    blocks: &[FeatureBlock],
) -> Result<Vec<NodeId>> {
    let mut tokens = Vec::with_capacity(blocks.len());
    for block in blocks {
        let weight = projections(&block.source_id).ok_or_else(|| {
            Error::Config(format!("no projection for source '{}'", block.source_id))
        })?;
        let raw = tape.leaf(Matrix::widen_row(&block.values));
        tokens.push(tape.matmul(raw, weight)?);
    }
    Ok(tokens)
}

/// Project every block to the model width and stack the tokens
/// scene / aligned / narrative.
///
/// `projections` maps a source id to its staged weight node
/// (`dim_in x d_model`). Errs when every group is empty.
pub fn assemble_lambda(
    tape: &mut Tape,
    projections: &dyn Fn(&str) -> Option<NodeId>,
    scene: &[FeatureBlock],
    aligned: &[FeatureBlock],
    narrative: &[FeatureBlock],
) -> Result<LambdaRepresentation> {
    if scene.is_empty() && aligned.is_empty() && narrative.is_empty() {
        return Err(Error::EmptyRepresentation);
    }
    let mut tokens = project_blocks(tape, projections, scene)?;
    tokens.extend(project_blocks(tape, projections, aligned)?);
    tokens.extend(project_blocks(tape, projections, narrative)?);
    let stacked = tape.concat_rows(&tokens)?;
    let block_map = BlockMap {
        scene: 0..scene.len(),
        aligned: scene.len()..scene.len() + aligned.len(),
        narrative: scene.len() + aligned.len()..tokens.len(),
    };
    Ok(LambdaRepresentation {
        tokens: stacked,
        block_map,
    })
}

/// Project the instruction blocks into the language token matrix.
pub fn assemble_language(
    tape: &mut Tape,
    projections: &dyn Fn(&str) -> Option<NodeId>,
    instruction: &[FeatureBlock],
) -> Result<LanguageFeature> {
    if instruction.is_empty() {
        return Err(Error::EmptyKeys("language feature"));
    }
    let tokens = project_blocks(tape, projections, instruction)?;
    let stacked = tape.concat_rows(&tokens)?;
    Ok(LanguageFeature {
        tokens: stacked,
        token_count: instruction.len(),
    })
}

/// Every block an episode contributes to the decoder, fetched in one pass.
#[derive(Debug, Clone)]
pub struct EpisodeFeatures {
    pub scene_before: Vec<FeatureBlock>,
    pub aligned_before: Vec<FeatureBlock>,
    pub narrative_before: Vec<FeatureBlock>,
    pub scene_after: Vec<FeatureBlock>,
    pub aligned_after: Vec<FeatureBlock>,
    pub narrative_after: Vec<FeatureBlock>,
    pub instruction: Vec<FeatureBlock>,
}

/// Fetch all feature blocks for an image pair. `before` and `after` are
/// usually [`Phase::Before`] and [`Phase::After`]; video evaluation passes
/// frame phases instead.
pub fn fetch_episode_features(
    provider: &dyn EmbeddingProvider,
    registry: &SourceRegistry,
    episode_id: &str,
    before: &Phase,
    after: &Phase,
) -> Result<EpisodeFeatures> {
    Ok(EpisodeFeatures {
        scene_before: assemble_scene(provider, registry, episode_id, before)?,
        aligned_before: assemble_aligned(provider, registry, episode_id, before)?,
        narrative_before: assemble_narrative(provider, registry, episode_id, before)?,
        scene_after: assemble_scene(provider, registry, episode_id, after)?,
        aligned_after: assemble_aligned(provider, registry, episode_id, after)?,
        narrative_after: assemble_narrative(provider, registry, episode_id, after)?,
        instruction: assemble_instruction(provider, registry, episode_id)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::fnv1a64;

    fn enabled(groups: &[Group]) -> BTreeSet<Group> {
        groups.iter().copied().collect()
    }

    #[test]
    fn standard_registry_has_nine_sources() {
        let reg = SourceRegistry::standard();
        assert_eq!(reg.total_sources(), 9);
        let scene_ids: Vec<&str> = reg.scene().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(scene_ids, ["vit", "dinov2", "clip_image_intermediate"]);
        assert_eq!(reg.aligned().len(), 1);
        assert_eq!(reg.narrative().len(), 2);
        assert_eq!(reg.instruction().len(), 3);
    }

    #[test]
    fn duplicate_source_id_rejected() {
        let mut cfg = RegistryConfig::default();
        cfg.aligned.push(SourceSpec::new("vit", 32));
        assert!(register_sources(cfg).is_err());
    }

    #[test]
    fn zero_dim_rejected() {
        let mut cfg = RegistryConfig::default();
        cfg.scene[0].dim = 0;
        assert!(register_sources(cfg).is_err());
    }

    #[test]
    fn scene_assembly_order_and_counts() {
        let reg = SourceRegistry::standard();
        let provider = SeededProvider::new(11, reg.clone());
        let blocks = assemble_scene(&provider, &reg, "ep1", &Phase::Before).unwrap();
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks[0].source_id, "vit");
        assert_eq!(blocks[2].source_id, "clip_image_intermediate");

        let aligned = assemble_aligned(&provider, &reg, "ep1", &Phase::Before).unwrap();
        assert_eq!(aligned.len(), 1);

        let narrative = assemble_narrative(&provider, &reg, "ep1", &Phase::Before).unwrap();
        assert_eq!(narrative.len(), 2);
        assert_eq!(narrative[0].source_id, "bert_caption");
    }

    #[test]
    fn restricted_registry_shrinks_blocks() {
        let mut cfg = RegistryConfig::default();
        cfg.scene.truncate(1);
        let reg = register_sources(cfg).unwrap();
        let provider = SeededProvider::new(11, reg.clone());
        let blocks = assemble_scene(&provider, &reg, "ep1", &Phase::Before).unwrap();
        assert_eq!(blocks.len(), 1);
    }

    #[test]
    fn disabled_group_assembles_empty() {
        let reg = SourceRegistry::standard().with_groups(&enabled(&[Group::Scene]));
        let provider = SeededProvider::new(5, reg.clone());
        assert!(assemble_aligned(&provider, &reg, "e", &Phase::After).unwrap().is_empty());
        assert!(assemble_narrative(&provider, &reg, "e", &Phase::After).unwrap().is_empty());
        assert_eq!(assemble_scene(&provider, &reg, "e", &Phase::After).unwrap().len(), 3);
    }

    #[test]
    fn seeded_provider_is_deterministic() {
        let reg = SourceRegistry::standard();
        let provider = SeededProvider::new(99, reg.clone());
        let a = assemble_scene(&provider, &reg, "ep_x", &Phase::After).unwrap();
        let b = assemble_scene(&provider, &reg, "ep_x", &Phase::After).unwrap();
        assert_eq!(a, b);
        let other = assemble_scene(&provider, &reg, "ep_y", &Phase::After).unwrap();
        assert_ne!(a, other);
    }

    fn identity_projection_table(
        tape: &mut Tape,
        reg: &SourceRegistry,
    ) -> std::collections::BTreeMap<String, NodeId> {
        // Square identity projections keep tokens equal to raw blocks.
        let mut table = std::collections::BTreeMap::new();
        for (_, spec) in reg.image_sources() {
            let node = tape.leaf(Matrix::identity(spec.dim));
            table.insert(spec.id.clone(), node);
        }
        for spec in reg.instruction() {
            let node = tape.leaf(Matrix::identity(spec.dim));
            table.insert(spec.id.clone(), node);
        }
        table
    }

    fn tiny_registry() -> SourceRegistry {
        register_sources(RegistryConfig {
            scene: vec![SourceSpec::new("s0", 4), SourceSpec::new("s1", 4)],
            aligned: vec![SourceSpec::new("a0", 4)],
            narrative: vec![SourceSpec::new("n0", 4)],
            instruction: vec![SourceSpec::new("i0", 4)],
        })
        .unwrap()
    }

    #[test]
    fn lambda_token_count_and_partition() {
        let reg = tiny_registry();
        let provider = SeededProvider::new(3, reg.clone());
        let scene = assemble_scene(&provider, &reg, "e", &Phase::Before).unwrap();
        let aligned = assemble_aligned(&provider, &reg, "e", &Phase::Before).unwrap();
        let narrative = assemble_narrative(&provider, &reg, "e", &Phase::Before).unwrap();

        let mut tape = Tape::new();
        let table = identity_projection_table(&mut tape, &reg);
        let rep = assemble_lambda(&mut tape, &|id| table.get(id).copied(), &scene, &aligned, &narrative)
            .unwrap();

        assert_eq!(rep.block_map.token_count(), 4);
        assert_eq!(rep.block_map.scene, 0..2);
        assert_eq!(rep.block_map.aligned, 2..3);
        assert_eq!(rep.block_map.narrative, 3..4);
        assert_eq!(tape.value(rep.tokens).shape(), (4, 4));
    }

    #[test]
    fn identity_projection_preserves_block_values() {
        let reg = tiny_registry();
        let provider = SeededProvider::new(3, reg.clone());
        let scene = assemble_scene(&provider, &reg, "e", &Phase::Before).unwrap();

        let mut tape = Tape::new();
        let table = identity_projection_table(&mut tape, &reg);
        let rep =
            assemble_lambda(&mut tape, &|id| table.get(id).copied(), &scene, &[], &[]).unwrap();
        let tokens = tape.value(rep.tokens);
        for (row, block) in scene.iter().enumerate() {
            for (c, &v) in block.values.iter().enumerate() {
                assert_eq!(tokens.at(row, c), v as f64);
            }
        }
        // Scene-only: other groups are empty ranges.
        assert!(rep.block_map.aligned.is_empty());
        assert!(rep.block_map.narrative.is_empty());
    }

    #[test]
    fn all_groups_empty_is_an_error() {
        let mut tape = Tape::new();
        let err = assemble_lambda(&mut tape, &|_| None, &[], &[], &[]).unwrap_err();
        assert!(matches!(err, Error::EmptyRepresentation));
    }

    #[test]
    fn language_tokens_in_registry_order() {
        let reg = SourceRegistry::standard();
        let provider = SeededProvider::new(1, reg.clone());
        let blocks = assemble_instruction(&provider, &reg, "e").unwrap();
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks[0].source_id, "bert_instruction");
        assert_eq!(blocks[1].source_id, "clip_text");
        assert_eq!(blocks[2].source_id, "ada_instruction");
    }

    #[test]
    fn ablation_commutes_with_assembly() {
        // Dropping a group before assembly == assembling all groups and
        // dropping that group's token rows.
        let reg = tiny_registry();
        let provider = SeededProvider::new(8, reg.clone());
        let scene = assemble_scene(&provider, &reg, "e", &Phase::Before).unwrap();
        let aligned = assemble_aligned(&provider, &reg, "e", &Phase::Before).unwrap();
        let narrative = assemble_narrative(&provider, &reg, "e", &Phase::Before).unwrap();

        let mut tape = Tape::new();
        let table = identity_projection_table(&mut tape, &reg);
        let proj = |id: &str| table.get(id).copied();

        let full = assemble_lambda(&mut tape, &proj, &scene, &aligned, &narrative).unwrap();
        let without_aligned = assemble_lambda(&mut tape, &proj, &scene, &[], &narrative).unwrap();

        let full_tokens = tape.value(full.tokens).clone();
        let reduced = tape.value(without_aligned.tokens).clone();
        let mut kept_rows = Vec::new();
        for r in 0..full_tokens.rows() {
            if !full.block_map.aligned.contains(&r) {
                kept_rows.push(full_tokens.row(r).to_vec());
            }
        }
        let dropped = Matrix::from_rows(&kept_rows).unwrap();
        assert_eq!(dropped, reduced);
    }

    #[test]
    fn caption_prompt_is_frozen() {
        assert!(CAPTION_PROMPT.contains("{instruction}"));
        assert!(CAPTION_PROMPT.starts_with("Give a clear, comprehensive"));
        // Freeze the asset against accidental edits.
        assert_eq!(fnv1a64(CAPTION_PROMPT.as_bytes()), 0xcd5228d700d53675);
        let rendered = caption_prompt_for("pick apple");
        assert!(rendered.contains("Sentence string: 'pick apple'"));
        assert!(!rendered.contains("{instruction}"));
    }
}
