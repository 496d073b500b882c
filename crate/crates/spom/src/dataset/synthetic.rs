//! Synthetic tabletop worlds with ground-truth labels.
//!
//! Each episode samples a small grid world, an instruction over it, and an
//! execution that either carries the instruction out or is corrupted
//! (wrong object, wrong destination, or no-op). The label comes from a
//! predicate oracle that checks the instruction's postcondition on the
//! post-manipulation state, never from the corruption bookkeeping.
//!
//! Feature blocks are emitted per representation group:
//!
//! * scene sources carry the raw object state (positions, upright flags,
//!   one-hot colors/shapes/names);
//! * the aligned source carries instruction-conditioned match indicators,
//!   including whether the instruction's postcondition holds;
//! * narrative sources carry pairwise spatial relations.
//!
//! Because the aligned group exposes the postcondition bit for both
//! phases, a linear rule over (after - before, instruction features)
//! separates the labels by construction. [`SignalRouting`] variants move
//! all label signal into a single group and turn the other image groups
//! into pure noise, which is what the ablation sensitivity checks need.

use crate::dataset::{Episode, Label};
use crate::error::{Error, Result};
use crate::representation::{
    register_sources, FeatureBlock, MemoryStore, Phase, Provenance, RegistryConfig, SourceRegistry,
    SourceSpec,
};
use crate::rng::{fnv1a64, SplitMix64};
use serde::{Deserialize, Serialize};

pub const OBJECT_NAMES: [&str; 8] = [
    "block", "mug", "can", "bottle", "apple", "sponge", "bowl", "banana",
];
pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "white", "black"];
pub const SHAPES: [&str; 4] = ["cube", "cylinder", "sphere", "cone"];

/// Fixed number of object slots in every encoding.
pub const MAX_SLOTS: usize = 4;

const RAW_DIM: usize = MAX_SLOTS * 23; // 92
const REL_DIM: usize = 30;
const COND_DIM: usize = 15;
const INSTR_DIM: usize = 33;

/// Strength of the postcondition indicator inside conditioned features.
const PRED_GAIN: f32 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub name: usize,
    pub color: usize,
    pub shape: usize,
    pub x: i64,
    pub y: i64,
    pub upright: bool,
    pub held: bool,
}

impl SceneObject {
    fn chebyshev(&self, other: &SceneObject) -> i64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionKind {
    Pick,
    PlaceUpright,
    KnockOver,
    MoveNear,
}

impl ActionKind {
    const ALL: [ActionKind; 4] = [
        ActionKind::Pick,
        ActionKind::PlaceUpright,
        ActionKind::KnockOver,
        ActionKind::MoveNear,
    ];

    fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).unwrap()
    }
}

/// The instruction, resolved to object descriptors rather than indices:
/// the predicate oracle must find its objects the way the sentence does.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec {
    pub kind: ActionKind,
    /// (color index, name index) of the target object.
    pub target: (usize, usize),
    /// Reference object for `MoveNear`.
    pub reference: Option<(usize, usize)>,
}

/// How a failed execution went wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corruption {
    WrongObject,
    WrongDestination,
    NoOp,
}

/// One sampled episode with full provenance for oracle re-checks.
#[derive(Debug, Clone)]
pub struct EpisodeWorld {
    pub pre: World,
    pub post: World,
    pub spec: ActionSpec,
    pub executed_correctly: bool,
    pub corruption: Option<Corruption>,
}

/// Which representation group carries the label signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalRouting {
    /// Every group carries its natural content.
    Balanced,
    /// Only scene blocks are informative; aligned/narrative are noise.
    SceneOnly,
    /// Only the aligned block is informative.
    AlignedOnly,
    /// Only narrative blocks are informative.
    NarrativeOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_episodes: usize,
    pub n_objects_max: usize,
    pub failure_rate: f64,
    pub seed: u64,
    pub grid: i64,
    /// Chebyshev distance that counts as "near". The meaning of "near" is
    /// genuinely ambiguous in natural instructions, so it stays a knob.
    pub near_threshold: i64,
    pub routing: SignalRouting,
    /// Amplitude of the additive per-source jitter.
    pub noise: f64,
    /// Failure modes the generator cycles through.
    pub corruptions: Vec<Corruption>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_episodes: 100,
            n_objects_max: MAX_SLOTS,
            failure_rate: 0.5,
            seed: 7,
            grid: 8,
            near_threshold: 1,
            routing: SignalRouting::Balanced,
            noise: 0.01,
            corruptions: vec![Corruption::WrongObject, Corruption::WrongDestination, Corruption::NoOp],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 {
            return Err(Error::Config("n_episodes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(Error::Config(format!(
                "failure_rate {} outside [0, 1]",
                self.failure_rate
            )));
        }
        if self.n_objects_max < 2 || self.n_objects_max > MAX_SLOTS {
            return Err(Error::Config(format!(
                "n_objects_max must be in 2..={MAX_SLOTS}"
            )));
        }
        if self.grid < 4 {
            return Err(Error::Config("grid must be at least 4".into()));
        }
        if self.corruptions.is_empty() {
            return Err(Error::Config("corruptions must be nonempty".into()));
        }
        Ok(())
    }
}

/// Registry whose dims match the encodings the generator emits under the
/// given routing.
pub fn synthetic_registry(config: &SynthConfig) -> SourceRegistry {
    let (scene_dim, aligned_dim, narrative_dim) = match config.routing {
        SignalRouting::Balanced | SignalRouting::AlignedOnly => (RAW_DIM, COND_DIM, REL_DIM),
        SignalRouting::SceneOnly => (COND_DIM + RAW_DIM, COND_DIM, REL_DIM),
        SignalRouting::NarrativeOnly => (RAW_DIM, COND_DIM, COND_DIM + REL_DIM),
    };
    register_sources(RegistryConfig {
        scene: vec![
            SourceSpec::new("vit", scene_dim),
            SourceSpec::new("dinov2", scene_dim),
            SourceSpec::new("clip_image_intermediate", scene_dim),
        ],
        aligned: vec![SourceSpec::new("clip_image_output", aligned_dim)],
        narrative: vec![
            SourceSpec::new("bert_caption", narrative_dim),
            SourceSpec::new("te3l_caption", narrative_dim),
        ],
        instruction: vec![
            SourceSpec::new("bert_instruction", INSTR_DIM),
            SourceSpec::new("clip_text", INSTR_DIM),
            SourceSpec::new("ada_instruction", INSTR_DIM),
        ],
    })
    .expect("synthetic registry is valid")
}

/// Render the instruction sentence.
pub fn instruction_text(spec: &ActionSpec) -> String {
    let target = format!("{} {}", COLORS[spec.target.0], OBJECT_NAMES[spec.target.1]);
    match spec.kind {
        ActionKind::Pick => format!("pick {target}"),
        ActionKind::PlaceUpright => format!("place {target} upright"),
        ActionKind::KnockOver => format!("knock {target} over"),
        ActionKind::MoveNear => {
            let r = spec.reference.expect("move has a reference");
            format!("move {target} near {} {}", COLORS[r.0], OBJECT_NAMES[r.1])
        }
    }
}

fn resolve(world: &World, descriptor: (usize, usize)) -> Option<usize> {
    world
        .objects
        .iter()
        .position(|o| o.color == descriptor.0 && o.name == descriptor.1)
}

/// The instruction's postcondition, evaluated on a world state. This is
/// the ground-truth oracle: the label of an episode is exactly this
/// predicate applied to the post-manipulation world.
pub fn predicate_holds(world: &World, spec: &ActionSpec, near_threshold: i64) -> bool {
    let Some(t) = resolve(world, spec.target) else {
        return false;
    };
    let target = &world.objects[t];
    match spec.kind {
        ActionKind::Pick => target.held,
        ActionKind::PlaceUpright => target.upright && !target.held,
        ActionKind::KnockOver => !target.upright && !target.held,
        ActionKind::MoveNear => {
            let Some(r) = spec.reference.and_then(|d| resolve(world, d)) else {
                return false;
            };
            let reference = &world.objects[r];
            !target.held && !reference.held && target.chebyshev(reference) <= near_threshold
        }
    }
}

fn random_cell(rng: &mut SplitMix64, grid: i64) -> (i64, i64) {
    (
        rng.next_below(grid as usize) as i64,
        rng.next_below(grid as usize) as i64,
    )
}

fn occupied(world: &World, cell: (i64, i64)) -> bool {
    world
        .objects
        .iter()
        .any(|o| !o.held && (o.x, o.y) == cell)
}

fn sample_world(rng: &mut SplitMix64, config: &SynthConfig) -> World {
    let n = 2 + rng.next_below(config.n_objects_max - 1);
    let mut name_pool: Vec<usize> = (0..OBJECT_NAMES.len()).collect();
    rng.shuffle(&mut name_pool);
    let mut world = World {
        objects: Vec::with_capacity(n),
    };
    for &name in name_pool.iter().take(n) {
        let mut cell = random_cell(rng, config.grid);
        while occupied(&world, cell) {
            cell = random_cell(rng, config.grid);
        }
        world.objects.push(SceneObject {
            name,
            color: rng.next_below(COLORS.len()),
            shape: rng.next_below(SHAPES.len()),
            x: cell.0,
            y: cell.1,
            upright: rng.next_f64() < 0.5,
            held: false,
        });
    }
    world
}

fn sample_spec(rng: &mut SplitMix64, world: &World) -> ActionSpec {
    let kind = ActionKind::ALL[rng.next_below(ActionKind::ALL.len())];
    let t = rng.next_below(world.objects.len());
    let target = (world.objects[t].color, world.objects[t].name);
    let reference = if kind == ActionKind::MoveNear {
        let mut r = rng.next_below(world.objects.len());
        while r == t {
            r = rng.next_below(world.objects.len());
        }
        Some((world.objects[r].color, world.objects[r].name))
    } else {
        None
    };
    ActionSpec {
        kind,
        target,
        reference,
    }
}

/// Adjust the pre state so the instruction's postcondition does not
/// already hold before the manipulation.
fn enforce_unsatisfied(world: &mut World, spec: &ActionSpec, config: &SynthConfig, rng: &mut SplitMix64) {
    let t = resolve(world, spec.target).expect("target exists");
    match spec.kind {
        ActionKind::Pick => {} // nothing starts held
        ActionKind::PlaceUpright => world.objects[t].upright = false,
        ActionKind::KnockOver => world.objects[t].upright = true,
        ActionKind::MoveNear => {
            let r = resolve(world, spec.reference.unwrap()).expect("reference exists");
            while world.objects[t].chebyshev(&world.objects[r]) <= config.near_threshold {
                let cell = random_cell(rng, config.grid);
                if !occupied(world, cell) {
                    world.objects[t].x = cell.0;
                    world.objects[t].y = cell.1;
                }
            }
        }
    }
}

fn move_near(world: &mut World, t: usize, r: usize, threshold: i64, grid: i64, rng: &mut SplitMix64) {
    let (rx, ry) = (world.objects[r].x, world.objects[r].y);
    let mut candidates = Vec::new();
    for dx in -threshold..=threshold {
        for dy in -threshold..=threshold {
            let cell = (rx + dx, ry + dy);
            if cell.0 < 0 || cell.1 < 0 || cell.0 >= grid || cell.1 >= grid {
                continue;
            }
            if (dx, dy) != (0, 0) && !occupied(world, cell) {
                candidates.push(cell);
            }
        }
    }
    let cell = if candidates.is_empty() {
        (rx, ry)
    } else {
        candidates[rng.next_below(candidates.len())]
    };
    world.objects[t].x = cell.0;
    world.objects[t].y = cell.1;
}

fn apply_to(world: &mut World, kind: ActionKind, t: usize, reference: Option<usize>, config: &SynthConfig, rng: &mut SplitMix64) {
    match kind {
        ActionKind::Pick => world.objects[t].held = true,
        ActionKind::PlaceUpright => world.objects[t].upright = true,
        ActionKind::KnockOver => world.objects[t].upright = false,
        ActionKind::MoveNear => {
            let r = reference.expect("move has a reference");
            move_near(world, t, r, config.near_threshold, config.grid, rng);
        }
    }
}

fn shift_elsewhere(world: &mut World, t: usize, config: &SynthConfig, rng: &mut SplitMix64) {
    loop {
        let cell = random_cell(rng, config.grid);
        if cell != (world.objects[t].x, world.objects[t].y) && !occupied(world, cell) {
            world.objects[t].x = cell.0;
            world.objects[t].y = cell.1;
            return;
        }
    }
}

/// Execute the action on a copy of `pre`, honestly or corrupted.
fn execute(
    pre: &World,
    spec: &ActionSpec,
    corruption: Option<Corruption>,
    config: &SynthConfig,
    rng: &mut SplitMix64,
) -> World {
    let mut post = pre.clone();
    let t = resolve(&post, spec.target).expect("target exists");
    let reference = spec.reference.map(|d| resolve(&post, d).expect("reference exists"));
    match corruption {
        None => apply_to(&mut post, spec.kind, t, reference, config, rng),
        Some(Corruption::NoOp) => {}
        Some(Corruption::WrongObject) => {
            let mut w = rng.next_below(post.objects.len());
            while w == t {
                w = rng.next_below(post.objects.len());
            }
            apply_to(&mut post, spec.kind, w, reference, config, rng);
        }
        Some(Corruption::WrongDestination) => match spec.kind {
            ActionKind::MoveNear => {
                let r = reference.expect("move has a reference");
                // Land somewhere that is definitely not near the reference.
                loop {
                    let cell = random_cell(rng, config.grid);
                    let d = (cell.0 - post.objects[r].x)
                        .abs()
                        .max((cell.1 - post.objects[r].y).abs());
                    if d > config.near_threshold && !occupied(&post, cell) {
                        post.objects[t].x = cell.0;
                        post.objects[t].y = cell.1;
                        break;
                    }
                }
            }
            // For the other actions the effector slips: the object shifts
            // but its predicate-relevant state is unchanged.
            _ => shift_elsewhere(&mut post, t, config, rng),
        },
    }
    post
}

// ---- feature encodings ----------------------------------------------------

fn slot_encoding(obj: Option<&SceneObject>, grid: i64) -> Vec<f32> {
    let mut v = vec![0.0f32; 23];
    if let Some(o) = obj {
        let norm = (grid - 1) as f32;
        v[0] = 1.0;
        v[1] = if o.held { 1.0 } else { 0.0 };
        v[2] = if o.upright { 1.0 } else { 0.0 };
        v[3] = o.x as f32 / norm;
        v[4] = o.y as f32 / norm;
        v[5 + o.color] = 1.0;
        v[11 + o.shape] = 1.0;
        v[15 + o.name] = 1.0;
    }
    v
}

/// Raw object state over the fixed slots.
pub fn raw_state(world: &World, grid: i64) -> Vec<f32> {
    let mut out = Vec::with_capacity(RAW_DIM);
    for i in 0..MAX_SLOTS {
        out.extend(slot_encoding(world.objects.get(i), grid));
    }
    out
}

/// Pairwise spatial relations over the fixed slots.
pub fn relations(world: &World, near_threshold: i64, grid: i64) -> Vec<f32> {
    let norm = (grid - 1) as f32;
    let mut out = Vec::with_capacity(REL_DIM);
    for i in 0..MAX_SLOTS {
        for j in (i + 1)..MAX_SLOTS {
            match (world.objects.get(i), world.objects.get(j)) {
                (Some(a), Some(b)) => {
                    let cheb = a.chebyshev(b);
                    out.push(1.0);
                    out.push(if cheb <= near_threshold { 1.0 } else { 0.0 });
                    out.push((a.x - b.x) as f32 / norm);
                    out.push((a.y - b.y) as f32 / norm);
                    out.push(cheb as f32 / norm);
                }
                _ => out.extend([0.0; 5]),
            }
        }
    }
    out
}

/// Instruction-conditioned match indicators, including the postcondition.
pub fn conditioned(world: &World, spec: &ActionSpec, near_threshold: i64, grid: i64) -> Vec<f32> {
    let norm = (grid - 1) as f32;
    let t = resolve(world, spec.target);
    let r = spec.reference.and_then(|d| resolve(world, d));
    let mut out = Vec::with_capacity(COND_DIM);
    for i in 0..MAX_SLOTS {
        out.push(if Some(i) == t { 1.0 } else { 0.0 });
        out.push(if r.is_some() && Some(i) == r { 1.0 } else { 0.0 });
    }
    let target = t.map(|i| &world.objects[i]);
    out.push(if target.is_some() { 1.0 } else { 0.0 });
    out.push(target.map_or(0.0, |o| if o.held { 1.0 } else { 0.0 }));
    out.push(target.map_or(0.0, |o| if o.upright { 1.0 } else { 0.0 }));
    out.push(target.map_or(0.0, |o| if o.upright { 0.0 } else { 1.0 }));
    match (target, r.map(|i| &world.objects[i])) {
        (Some(a), Some(b)) => {
            let cheb = a.chebyshev(b);
            out.push(cheb as f32 / norm);
            out.push(if cheb <= near_threshold { 1.0 } else { 0.0 });
        }
        _ => out.extend([0.0; 2]),
    }
    out.push(if predicate_holds(world, spec, near_threshold) {
        PRED_GAIN
    } else {
        0.0
    });
    out
}

/// Features of the instruction sentence alone.
pub fn instruction_features(spec: &ActionSpec) -> Vec<f32> {
    let mut out = vec![0.0f32; INSTR_DIM];
    out[spec.kind.index()] = 1.0;
    out[4 + spec.target.0] = 1.0;
    out[10 + spec.target.1] = 1.0;
    if let Some(r) = spec.reference {
        out[18] = 1.0;
        out[19 + r.0] = 1.0;
        out[25 + r.1] = 1.0;
    }
    out
}

/// Deterministic caption of a world state.
pub fn caption_text(world: &World) -> String {
    let mut parts = vec!["In the image,".to_string()];
    for o in &world.objects {
        let sentence = if o.held {
            format!(
                "the {} {} {} is held by the robot.",
                COLORS[o.color], SHAPES[o.shape], OBJECT_NAMES[o.name]
            )
        } else {
            format!(
                "a {} {} {} {} at ({}, {}).",
                COLORS[o.color],
                SHAPES[o.shape],
                OBJECT_NAMES[o.name],
                if o.upright { "sits upright" } else { "lies on its side" },
                o.x,
                o.y
            )
        };
        parts.push(sentence);
    }
    parts.join(" ")
}

// ---- store assembly ---------------------------------------------------------

/// Per-source fixed permutation so no two sources expose identical layouts.
fn source_permutation(source_id: &str, dim: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..dim).collect();
    let mut rng = SplitMix64::derive(fnv1a64(source_id.as_bytes()), "source-perm");
    rng.shuffle(&mut perm);
    perm
}

fn finish_block(
    base: &[f32],
    source_id: &str,
    episode_id: &str,
    phase: &Phase,
    config: &SynthConfig,
) -> Vec<f32> {
    let perm = source_permutation(source_id, base.len());
    let mut values = vec![0.0f32; base.len()];
    for (i, &v) in base.iter().enumerate() {
        values[perm[i]] = v;
    }
    let key = format!(
        "{}|{}|{}|{}|noise",
        config.seed,
        episode_id,
        phase.dir_name(),
        source_id
    );
    let mut rng = SplitMix64::new(fnv1a64(key.as_bytes()));
    for v in &mut values {
        *v += rng.next_symmetric(config.noise) as f32;
    }
    values
}

/// Uninformative block for groups the routing switched off. Jitter-scale
/// amplitude: anything larger gives the model an episode fingerprint to
/// memorize, which defeats the causal isolation the routing exists for.
fn noise_block(dim: usize, source_id: &str, episode_id: &str, phase: &Phase, config: &SynthConfig) -> Vec<f32> {
    let key = format!(
        "{}|{}|{}|{}|pure-noise",
        config.seed,
        episode_id,
        phase.dir_name(),
        source_id
    );
    let mut rng = SplitMix64::new(fnv1a64(key.as_bytes()));
    (0..dim).map(|_| rng.next_symmetric(config.noise) as f32).collect()
}

fn group_base(
    group: crate::representation::Group,
    world: &World,
    spec: &ActionSpec,
    config: &SynthConfig,
) -> Option<Vec<f32>> {
    use crate::representation::Group;
    let raw = || raw_state(world, config.grid);
    let rel = || relations(world, config.near_threshold, config.grid);
    let cond = || conditioned(world, spec, config.near_threshold, config.grid);
    match (config.routing, group) {
        (SignalRouting::Balanced, Group::Scene) => Some(raw()),
        (SignalRouting::Balanced, Group::Aligned) => Some(cond()),
        (SignalRouting::Balanced, Group::Narrative) => Some(rel()),
        (SignalRouting::SceneOnly, Group::Scene) => Some([cond(), raw()].concat()),
        (SignalRouting::SceneOnly, _) => None,
        (SignalRouting::AlignedOnly, Group::Aligned) => Some(cond()),
        (SignalRouting::AlignedOnly, _) => None,
        (SignalRouting::NarrativeOnly, Group::Narrative) => Some([cond(), rel()].concat()),
        (SignalRouting::NarrativeOnly, _) => None,
    }
}

fn insert_phase_blocks(
    store: &mut MemoryStore,
    registry: &SourceRegistry,
    episode_id: &str,
    phase: &Phase,
    world: &World,
    spec: &ActionSpec,
    config: &SynthConfig,
) {
    for (group, source) in registry.image_sources() {
        let store_phase = if group == crate::representation::Group::Narrative {
            phase.caption_of()
        } else {
            phase.clone()
        };
        let values = match group_base(group, world, spec, config) {
            Some(base) => {
                debug_assert_eq!(base.len(), source.dim, "{}", source.id);
                finish_block(&base, &source.id, episode_id, &store_phase, config)
            }
            None => noise_block(source.dim, &source.id, episode_id, &store_phase, config),
        };
        store.insert(
            episode_id,
            &store_phase,
            FeatureBlock {
                source_id: source.id.clone(),
                dim: values.len(),
                values,
                provenance: Provenance::Synthetic,
            },
        );
    }
    store.insert_caption(episode_id, phase, caption_text(world));
}

fn insert_instruction_blocks(
    store: &mut MemoryStore,
    registry: &SourceRegistry,
    episode_id: &str,
    spec: &ActionSpec,
    config: &SynthConfig,
) {
    let base = instruction_features(spec);
    for source in registry.instruction() {
        let values = finish_block(&base, &source.id, episode_id, &Phase::Instruction, config);
        store.insert(
            episode_id,
            &Phase::Instruction,
            FeatureBlock {
                source_id: source.id.clone(),
                dim: values.len(),
                values,
                provenance: Provenance::Synthetic,
            },
        );
    }
}

/// A generated dataset: manifest, feature store, and the sampled worlds.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub episodes: Vec<Episode>,
    pub store: MemoryStore,
    pub worlds: Vec<EpisodeWorld>,
    pub registry: SourceRegistry,
}

/// Sample `config.n_episodes` worlds and emit their manifest and feature
/// store. Deterministic: the same config yields a bitwise-identical store.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let registry = synthetic_registry(config);
    let mut store = MemoryStore::new();
    let mut episodes = Vec::with_capacity(config.n_episodes);
    let mut worlds = Vec::with_capacity(config.n_episodes);
    let mut corruption_cursor = 0usize;

    for i in 0..config.n_episodes {
        let episode_id = format!("synth_{i:05}");
        let mut rng = SplitMix64::derive(config.seed, &format!("episode-{i}"));

        let mut pre = sample_world(&mut rng, config);
        let spec = sample_spec(&mut rng, &pre);
        enforce_unsatisfied(&mut pre, &spec, config, &mut rng);

        let correct = rng.next_f64() >= config.failure_rate;
        let corruption = if correct {
            None
        } else {
            let c = config.corruptions[corruption_cursor % config.corruptions.len()];
            corruption_cursor += 1;
            Some(c)
        };
        let post = execute(&pre, &spec, corruption, config, &mut rng);

        let label = if predicate_holds(&post, &spec, config.near_threshold) {
            Label::Success
        } else {
            Label::Failure
        };

        insert_phase_blocks(&mut store, &registry, &episode_id, &Phase::Before, &pre, &spec, config);
        insert_phase_blocks(&mut store, &registry, &episode_id, &Phase::After, &post, &spec, config);
        insert_instruction_blocks(&mut store, &registry, &episode_id, &spec, config);

        episodes.push(Episode::new(&episode_id, instruction_text(&spec), label));
        worlds.push(EpisodeWorld {
            pre,
            post,
            spec,
            executed_correctly: correct,
            corruption,
        });
    }

    Ok(SyntheticDataset {
        episodes,
        store,
        worlds,
        registry,
    })
}

/// Generate a video episode: `n_frames` frames named `frame_0..`, showing
/// the pre state until `change_at` (if any) and the successful post state
/// from then on. The label is success exactly when the change happens
/// within the video.
pub fn generate_video_episode(
    config: &SynthConfig,
    store: &mut MemoryStore,
    episode_id: &str,
    n_frames: usize,
    change_at: Option<usize>,
    tag: u64,
) -> Result<Episode> {
    config.validate()?;
    if n_frames < 2 {
        return Err(Error::Config("videos need at least 2 frames".into()));
    }
    if let Some(t) = change_at {
        if t == 0 || t >= n_frames {
            return Err(Error::Config(format!(
                "change_at {t} outside 1..{n_frames}"
            )));
        }
    }
    let registry = synthetic_registry(config);
    let mut rng = SplitMix64::derive(config.seed, &format!("video-{tag}"));
    let mut pre = sample_world(&mut rng, config);
    let spec = sample_spec(&mut rng, &pre);
    enforce_unsatisfied(&mut pre, &spec, config, &mut rng);
    let post = execute(&pre, &spec, None, config, &mut rng);

    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let name = format!("frame_{t}");
        let phase = Phase::Named(name.clone());
        let world = match change_at {
            Some(c) if t >= c => &post,
            _ => &pre,
        };
        insert_phase_blocks(store, &registry, episode_id, &phase, world, &spec, config);
        frames.push(name);
    }
    insert_instruction_blocks(store, &registry, episode_id, &spec, config);

    let label = if change_at.is_some() {
        Label::Success
    } else {
        Label::Failure
    };
    Ok(Episode {
        frames: Some(frames),
        ..Episode::new(episode_id, instruction_text(&spec), label)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::representation::EmbeddingProvider;

    #[test]
    fn failure_rate_zero_gives_all_successes() {
        let cfg = SynthConfig {
            n_episodes: 50,
            failure_rate: 0.0,
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        assert!(data.episodes.iter().all(|e| e.label == Label::Success));
    }

    #[test]
    fn noop_corruption_fails_everything() {
        let cfg = SynthConfig {
            n_episodes: 60,
            failure_rate: 1.0,
            corruptions: vec![Corruption::NoOp],
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        // The pre state never satisfies the instruction, so a no-op can
        // never succeed; check the pick/move cases explicitly.
        for (e, w) in data.episodes.iter().zip(&data.worlds) {
            if matches!(w.spec.kind, ActionKind::Pick | ActionKind::MoveNear) {
                assert_eq!(e.label, Label::Failure, "{}", e.instruction);
            }
            assert_eq!(e.label, Label::Failure);
        }
    }

    #[test]
    fn labels_match_predicate_oracle_exhaustively() {
        let cfg = SynthConfig {
            n_episodes: 200,
            failure_rate: 0.4,
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        for (e, w) in data.episodes.iter().zip(&data.worlds) {
            let expected = predicate_holds(&w.post, &w.spec, cfg.near_threshold);
            assert_eq!(e.label.is_success(), expected, "{}", e.episode_id);
            // Pre state never satisfies the instruction.
            assert!(!predicate_holds(&w.pre, &w.spec, cfg.near_threshold));
        }
    }

    #[test]
    fn correct_execution_satisfies_predicate() {
        let cfg = SynthConfig {
            n_episodes: 120,
            failure_rate: 0.5,
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        for (e, w) in data.episodes.iter().zip(&data.worlds) {
            assert_eq!(w.executed_correctly, e.label.is_success());
        }
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let cfg = SynthConfig {
            n_episodes: 30,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.episodes, b.episodes);
        for e in &a.episodes {
            for (_, source) in a.registry.image_sources() {
                let pa = a.store.get(&e.episode_id, &Phase::Before, &source.id);
                let pb = b.store.get(&e.episode_id, &Phase::Before, &source.id);
                match (pa, pb) {
                    (Ok(x), Ok(y)) => {
                        assert!(x.values.iter().zip(&y.values).all(|(u, v)| u.to_bits() == v.to_bits()));
                    }
                    // Narrative blocks live under the caption phase.
                    (Err(_), Err(_)) => {}
                    _ => panic!("stores disagree"),
                }
            }
        }
    }

    #[test]
    fn emitted_dims_match_registry() {
        for routing in [
            SignalRouting::Balanced,
            SignalRouting::SceneOnly,
            SignalRouting::AlignedOnly,
            SignalRouting::NarrativeOnly,
        ] {
            let cfg = SynthConfig {
                n_episodes: 3,
                routing,
                ..SynthConfig::default()
            };
            let data = generate_synthetic(&cfg).unwrap();
            let features = crate::representation::fetch_episode_features(
                &data.store,
                &data.registry,
                "synth_00000",
                &Phase::Before,
                &Phase::After,
            )
            .unwrap();
            assert_eq!(features.scene_before.len(), 3);
            assert_eq!(features.aligned_before.len(), 1);
            assert_eq!(features.narrative_before.len(), 2);
            assert_eq!(features.instruction.len(), 3);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SynthConfig {
            failure_rate: 1.5,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SynthConfig {
            n_episodes: 0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn captions_describe_objects() {
        let cfg = SynthConfig {
            n_episodes: 1,
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let caption = data.store.caption("synth_00000", &Phase::Before).unwrap();
        assert!(caption.starts_with("In the image,"));
    }

    #[test]
    fn video_episode_changes_at_the_requested_frame() {
        let cfg = SynthConfig::default();
        let mut store = MemoryStore::new();
        let episode =
            generate_video_episode(&cfg, &mut store, "vid_0", 16, Some(14), 0).unwrap();
        assert_eq!(episode.label, Label::Success);
        let frames = episode.frames.as_ref().unwrap();
        assert_eq!(frames.len(), 16);

        // Frames before the change describe the pre world; the aligned
        // block's conditioned features only flip at frame 14. Compare
        // captions, which carry no jitter.
        let c0 = store.caption("vid_0", &Phase::Named("frame_0".into())).unwrap().to_string();
        let c13 = store.caption("vid_0", &Phase::Named("frame_13".into())).unwrap().to_string();
        let c14 = store.caption("vid_0", &Phase::Named("frame_14".into())).unwrap().to_string();
        assert_eq!(c0, c13);
        assert_ne!(c13, c14);
    }

    #[test]
    fn video_without_change_is_failure() {
        let cfg = SynthConfig::default();
        let mut store = MemoryStore::new();
        let episode = generate_video_episode(&cfg, &mut store, "vid_1", 4, None, 1).unwrap();
        assert_eq!(episode.label, Label::Failure);
    }
}
