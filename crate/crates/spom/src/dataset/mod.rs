//! Episode manifests, dataset construction, deterministic splits, and the
//! synthetic world generator.

pub mod synthetic;

use crate::error::{Error, Result};
use crate::representation::Phase;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

/// Binary outcome of a manipulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Failure,
    Success,
}

impl Label {
    pub fn is_success(self) -> bool {
        self == Label::Success
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Failure => 0,
            Label::Success => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Failure),
            1 => Ok(Label::Success),
            other => Err(Error::Config(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v).map_err(serde::de::Error::custom)
    }
}

fn default_before_ref() -> String {
    "before".to_string()
}

fn default_after_ref() -> String {
    "after".to_string()
}

fn is_default_before(s: &str) -> bool {
    s == "before"
}

fn is_default_after(s: &str) -> bool {
    s == "after"
}

/// One manipulation episode: instruction, before/after feature references,
/// and the ground-truth label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub instruction: String,
    pub label: Label,
    /// Phase holding the pre-manipulation features.
    #[serde(default = "default_before_ref", skip_serializing_if = "is_default_before")]
    pub before_ref: String,
    /// Phase holding the post-manipulation features.
    #[serde(default = "default_after_ref", skip_serializing_if = "is_default_after")]
    pub after_ref: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flagged_mislabel: Option<bool>,
    /// Ordered frame phase names for video episodes; frame 0 is the
    /// pre-manipulation state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<String>>,
}

impl Episode {
    pub fn new(episode_id: impl Into<String>, instruction: impl Into<String>, label: Label) -> Self {
        Self {
            episode_id: episode_id.into(),
            instruction: instruction.into(),
            label,
            before_ref: default_before_ref(),
            after_ref: default_after_ref(),
            flagged_mislabel: None,
            frames: None,
        }
    }

    /// The pre-manipulation phase: the first frame for video episodes,
    /// the before reference otherwise.
    pub fn before_phase(&self) -> Phase {
        match &self.frames {
            Some(frames) if !frames.is_empty() => Phase::parse(&frames[0]),
            _ => Phase::parse(&self.before_ref),
        }
    }

    /// The post-manipulation phase: the last frame for video episodes.
    pub fn after_phase(&self) -> Phase {
        match &self.frames {
            Some(frames) if !frames.is_empty() => Phase::parse(frames.last().unwrap()),
            _ => Phase::parse(&self.after_ref),
        }
    }
}

/// Load a JSON Lines manifest, one episode per line. Rejects duplicate ids
/// and malformed lines with their line number.
pub fn load_manifest(path: &Path) -> Result<Vec<Episode>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut episodes = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let episode: Episode = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: idx + 1,
            detail: e.to_string(),
        })?;
        if let Some(frames) = &episode.frames {
            if frames.len() < 2 {
                return Err(Error::Manifest {
                    line: idx + 1,
                    detail: format!(
                        "episode '{}' has {} frame(s); video episodes need at least 2",
                        episode.episode_id,
                        frames.len()
                    ),
                });
            }
        }
        if !seen.insert(episode.episode_id.clone()) {
            return Err(Error::Manifest {
                line: idx + 1,
                detail: format!("duplicate episode id '{}'", episode.episode_id),
            });
        }
        episodes.push(episode);
    }
    Ok(episodes)
}

pub fn save_manifest(path: &Path, episodes: &[Episode]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    for episode in episodes {
        serde_json::to_writer(&mut file, episode).map_err(|e| Error::Config(e.to_string()))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Replace the instruction of every episode flagged as mislabeled with a
/// different instruction drawn uniformly from `pool`. Labels never change:
/// flagged episodes stay negative, everything else is untouched.
pub fn cleanse_negatives(
    mut episodes: Vec<Episode>,
    pool: &[String],
    seed: u64,
) -> Result<Vec<Episode>> {
    if pool.is_empty() {
        return Err(Error::Config("instruction pool is empty".into()));
    }
    let mut rng = SplitMix64::derive(seed, "cleanse");
    for episode in &mut episodes {
        if episode.flagged_mislabel != Some(true) {
            continue;
        }
        if episode.label != Label::Failure {
            return Err(Error::Config(format!(
                "episode '{}' is flagged as a mislabeled negative but has label 1",
                episode.episode_id
            )));
        }
        let alternatives: Vec<&String> =
            pool.iter().filter(|p| **p != episode.instruction).collect();
        if alternatives.is_empty() {
            return Err(Error::Config(format!(
                "pool has no alternative instruction for episode '{}'",
                episode.episode_id
            )));
        }
        episode.instruction = (*rng.choose(&alternatives)).clone();
    }
    Ok(episodes)
}

/// The distinct instructions of a manifest, in first-seen order.
pub fn instruction_pool(episodes: &[Episode]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut pool = Vec::new();
    for e in episodes {
        if seen.insert(e.instruction.clone()) {
            pool.push(e.instruction.clone());
        }
    }
    pool
}

/// Disjoint train/val/test episode-id lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Deterministic shuffle-then-partition split. `sizes` must sum to the
/// episode count.
pub fn split_dataset(
    episodes: &[Episode],
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplit> {
    split_dataset_with(episodes, sizes, seed, false)
}

/// As [`split_dataset`], optionally stratified by label so each part keeps
/// the overall positive/negative ratio.
pub fn split_dataset_with(
    episodes: &[Episode],
    sizes: (usize, usize, usize),
    seed: u64,
    stratified: bool,
) -> Result<DatasetSplit> {
    let (n_train, n_val, n_test) = sizes;
    if n_train + n_val + n_test != episodes.len() {
        return Err(Error::Config(format!(
            "split sizes {}+{}+{} != {} episodes",
            n_train,
            n_val,
            n_test,
            episodes.len()
        )));
    }
    let mut rng = SplitMix64::derive(seed, "split");

    let ordered: Vec<String> = if stratified {
        // Shuffle each class, then interleave classes proportionally so any
        // prefix keeps the overall ratio.
        let mut pos: Vec<String> = episodes
            .iter()
            .filter(|e| e.label.is_success())
            .map(|e| e.episode_id.clone())
            .collect();
        let mut neg: Vec<String> = episodes
            .iter()
            .filter(|e| !e.label.is_success())
            .map(|e| e.episode_id.clone())
            .collect();
        rng.shuffle(&mut pos);
        rng.shuffle(&mut neg);
        let total = episodes.len();
        let mut out = Vec::with_capacity(total);
        let (mut pi, mut ni) = (0usize, 0usize);
        for k in 0..total {
            // Position k should have consumed ~k*|pos|/total positives.
            let target_pos = ((k + 1) * pos.len()) / total;
            if pi < target_pos && pi < pos.len() {
                out.push(pos[pi].clone());
                pi += 1;
            } else if ni < neg.len() {
                out.push(neg[ni].clone());
                ni += 1;
            } else {
                out.push(pos[pi].clone());
                pi += 1;
            }
        }
        out
    } else {
        let mut ids: Vec<String> = episodes.iter().map(|e| e.episode_id.clone()).collect();
        rng.shuffle(&mut ids);
        ids
    };

    let train = ordered[..n_train].to_vec();
    let val = ordered[n_train..n_train + n_val].to_vec();
    let test = ordered[n_train + n_val..].to_vec();
    Ok(DatasetSplit {
        train,
        val,
        test,
        seed,
    })
}

/// Corpus statistics over a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total: usize,
    pub positives: usize,
    pub negatives: usize,
    pub vocabulary_size: usize,
    pub total_words: usize,
    pub mean_instruction_len: f64,
}

/// Counts and whitespace-tokenized text statistics.
pub fn dataset_stats(episodes: &[Episode]) -> StatsReport {
    let positives = episodes.iter().filter(|e| e.label.is_success()).count();
    let mut vocab = BTreeSet::new();
    let mut total_words = 0usize;
    for e in episodes {
        for word in e.instruction.split_whitespace() {
            vocab.insert(word.to_string());
            total_words += 1;
        }
    }
    let mean = if episodes.is_empty() {
        0.0
    } else {
        total_words as f64 / episodes.len() as f64
    };
    StatsReport {
        total: episodes.len(),
        positives,
        negatives: episodes.len() - positives,
        vocabulary_size: vocab.len(),
        total_words,
        mean_instruction_len: mean,
    }
}

/// Build a manifest with exact corpus statistics: `n_pos + n_neg` episodes,
/// a vocabulary of exactly `vocab_size` distinct words, and exactly
/// `total_words` words overall. Useful for exercising the construction
/// procedure when the real corpus is unavailable.
pub fn stats_fixture(
    n_pos: usize,
    n_neg: usize,
    vocab_size: usize,
    total_words: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    let n = n_pos + n_neg;
    if n == 0 {
        return Err(Error::Config("fixture needs at least one episode".into()));
    }
    if total_words < n || total_words < vocab_size {
        return Err(Error::Config(format!(
            "cannot spread {total_words} words over {n} episodes and {vocab_size} vocab words"
        )));
    }
    let vocab: Vec<String> = (0..vocab_size).map(|i| format!("w{i:02}")).collect();
    let base_len = total_words / n;
    let extras = total_words - base_len * n; // this many episodes get one extra word

    let mut rng = SplitMix64::derive(seed, "stats-fixture");
    let mut labels = vec![Label::Success; n_pos];
    labels.extend(vec![Label::Failure; n_neg]);
    rng.shuffle(&mut labels);

    let mut episodes = Vec::with_capacity(n);
    let mut word_idx = 0usize;
    for (i, label) in labels.into_iter().enumerate() {
        let len = base_len + usize::from(i < extras);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let w = vocab[word_idx % vocab_size].as_str();
                word_idx += 1;
                w
            })
            .collect();
        episodes.push(Episode::new(format!("fx_{i:06}"), words.join(" "), label));
    }
    Ok(episodes)
}

/// One before/after comparison inside a video episode.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPair {
    /// 1-based pair index `n`: frame 0 vs frame `n`.
    pub index: usize,
    pub before: Phase,
    pub after: Phase,
}

/// Expand a video episode into its `(frame 0, frame n)` pairs, n = 1..=N.
pub fn video_pairs(episode: &Episode) -> Result<Vec<VideoPair>> {
    let frames = episode
        .frames
        .as_ref()
        .ok_or_else(|| Error::Config(format!("episode '{}' has no frames", episode.episode_id)))?;
    if frames.len() < 2 {
        return Err(Error::Config(format!(
            "episode '{}' has {} frame(s); need at least 2",
            episode.episode_id,
            frames.len()
        )));
    }
    let before = Phase::parse(&frames[0]);
    Ok(frames[1..]
        .iter()
        .enumerate()
        .map(|(i, name)| VideoPair {
            index: i + 1,
            before: before.clone(),
            after: Phase::parse(name),
        })
        .collect())
}

/// Index episodes by id.
pub fn index_episodes(episodes: &[Episode]) -> BTreeMap<String, Episode> {
    episodes
        .iter()
        .map(|e| (e.episode_id.clone(), e.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn ep(id: &str, instruction: &str, label: Label) -> Episode {
        Episode::new(id, instruction, label)
    }

    #[test]
    fn empty_manifest_loads_empty() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let episodes = vec![
            ep("e1", "pick apple", Label::Success),
            Episode {
                flagged_mislabel: Some(true),
                ..ep("e2", "move mug near bowl", Label::Failure)
            },
            Episode {
                frames: Some(vec!["frame_0".into(), "frame_1".into()]),
                ..ep("e3", "knock bottle over", Label::Success)
            },
        ];
        save_manifest(&path, &episodes).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, episodes);
    }

    #[test]
    fn missing_label_is_named_with_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            "{\"episode_id\":\"e1\",\"instruction\":\"pick apple\",\"label\":1}\n{\"episode_id\":\"e2\",\"instruction\":\"pick pear\"}\n",
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("label"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        save_manifest(
            &path,
            &[ep("e1", "a b", Label::Success), ep("e1", "c d", Label::Failure)],
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn label_other_than_binary_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "{\"episode_id\":\"e\",\"instruction\":\"x\",\"label\":2}\n").unwrap();
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn cleansing_replaces_only_flagged_negatives() {
        let pool: Vec<String> = ["pick apple", "pick pear", "move mug near bowl"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let episodes = vec![
            ep("e1", "pick apple", Label::Success),
            Episode {
                flagged_mislabel: Some(true),
                ..ep("e2", "pick pear", Label::Failure)
            },
            ep("e3", "pick pear", Label::Failure),
        ];
        let cleansed = cleanse_negatives(episodes.clone(), &pool, 5).unwrap();
        assert_eq!(cleansed[0], episodes[0]);
        assert_eq!(cleansed[2], episodes[2]);
        assert_ne!(cleansed[1].instruction, "pick pear");
        assert!(pool.contains(&cleansed[1].instruction));
        assert_eq!(cleansed[1].label, Label::Failure);

        // Deterministic under the seed.
        let again = cleanse_negatives(episodes, &pool, 5).unwrap();
        assert_eq!(cleansed, again);
    }

    #[test]
    fn cleansing_zero_flagged_is_identity() {
        let pool = vec!["a".to_string(), "b".to_string()];
        let episodes = vec![ep("e1", "a", Label::Failure), ep("e2", "b", Label::Success)];
        assert_eq!(cleanse_negatives(episodes.clone(), &pool, 1).unwrap(), episodes);
    }

    #[test]
    fn cleansing_rejects_empty_pool() {
        let episodes = vec![Episode {
            flagged_mislabel: Some(true),
            ..ep("e", "x", Label::Failure)
        }];
        assert!(cleanse_negatives(episodes, &[], 1).is_err());
    }

    #[test]
    fn cleansing_rejects_flagged_positive() {
        let pool = vec!["a".to_string(), "b".to_string()];
        let episodes = vec![Episode {
            flagged_mislabel: Some(true),
            ..ep("e", "a", Label::Success)
        }];
        assert!(cleanse_negatives(episodes, &pool, 1).is_err());
    }

    #[test]
    fn seeded_cleansing_replaces_exactly_the_flagged() {
        let mut episodes: Vec<Episode> = (0..10)
            .map(|i| ep(&format!("n{i}"), &format!("inst {i}"), Label::Failure))
            .collect();
        for e in episodes.iter_mut().take(4) {
            e.flagged_mislabel = Some(true);
        }
        let pool = instruction_pool(&episodes);
        let cleansed = cleanse_negatives(episodes.clone(), &pool, 9).unwrap();
        let changed: Vec<bool> = episodes
            .iter()
            .zip(&cleansed)
            .map(|(a, b)| a.instruction != b.instruction)
            .collect();
        assert_eq!(changed.iter().filter(|c| **c).count(), 4);
        assert!(changed[..4].iter().all(|c| *c));
        for (a, b) in episodes.iter().zip(&cleansed) {
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn split_partitions_and_replays() {
        let episodes: Vec<Episode> =
            (0..100).map(|i| ep(&format!("e{i}"), "x", Label::Success)).collect();
        let split = split_dataset(&episodes, (80, 10, 10), 3).unwrap();
        assert_eq!(split.train.len(), 80);
        assert_eq!(split.val.len(), 10);
        assert_eq!(split.test.len(), 10);

        let mut all: Vec<&String> =
            split.train.iter().chain(&split.val).chain(&split.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);

        let again = split_dataset(&episodes, (80, 10, 10), 3).unwrap();
        assert_eq!(split, again);
        let other = split_dataset(&episodes, (80, 10, 10), 4).unwrap();
        assert_ne!(split, other);
    }

    #[test]
    fn split_all_train_is_valid() {
        let episodes: Vec<Episode> =
            (0..5).map(|i| ep(&format!("e{i}"), "x", Label::Failure)).collect();
        let split = split_dataset(&episodes, (5, 0, 0), 1).unwrap();
        assert_eq!(split.train.len(), 5);
        assert!(split.val.is_empty() && split.test.is_empty());
    }

    #[test]
    fn split_size_mismatch_rejected() {
        let episodes: Vec<Episode> =
            (0..5).map(|i| ep(&format!("e{i}"), "x", Label::Failure)).collect();
        assert!(split_dataset(&episodes, (3, 1, 0), 1).is_err());
    }

    #[test]
    fn stratified_split_keeps_ratios() {
        let mut episodes = Vec::new();
        for i in 0..80 {
            episodes.push(ep(&format!("p{i}"), "x", Label::Success));
        }
        for i in 0..20 {
            episodes.push(ep(&format!("n{i}"), "x", Label::Failure));
        }
        let split = split_dataset_with(&episodes, (50, 25, 25), 7, true).unwrap();
        let count_pos = |ids: &[String]| ids.iter().filter(|id| id.starts_with('p')).count();
        // 80% positives overall; each part should be close.
        assert_eq!(count_pos(&split.train), 40);
        assert_eq!(count_pos(&split.val), 20);
        assert_eq!(count_pos(&split.test), 20);
    }

    #[test]
    fn stats_single_episode() {
        let report = dataset_stats(&[ep("e", "pick apple", Label::Success)]);
        assert_eq!(report.total, 1);
        assert_eq!(report.vocabulary_size, 2);
        assert_eq!(report.total_words, 2);
        assert_eq!(report.mean_instruction_len, 2.0);
    }

    #[test]
    fn stats_match_naive_recount() {
        let episodes = vec![
            ep("a", "pick red apple", Label::Success),
            ep("b", "pick apple", Label::Failure),
            ep("c", "move apple near bowl", Label::Success),
        ];
        let report = dataset_stats(&episodes);
        // Naive oracle recount.
        let mut words = Vec::new();
        for e in &episodes {
            words.extend(e.instruction.split(' '));
        }
        let distinct: BTreeSet<&str> = words.iter().copied().collect();
        assert_eq!(report.total_words, words.len());
        assert_eq!(report.vocabulary_size, distinct.len());
        assert_eq!(report.positives, 2);
        assert_eq!(report.negatives, 1);
        assert!((report.mean_instruction_len - words.len() as f64 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fixture_hits_exact_statistics() {
        let episodes = stats_fixture(100, 40, 49, 790, 3).unwrap();
        let report = dataset_stats(&episodes);
        assert_eq!(report.total, 140);
        assert_eq!(report.positives, 100);
        assert_eq!(report.negatives, 40);
        assert_eq!(report.vocabulary_size, 49);
        assert_eq!(report.total_words, 790);
    }

    #[test]
    fn video_pairs_expand_in_order() {
        let mut episode = ep("v", "pick apple", Label::Success);
        episode.frames = Some((0..16).map(|i| format!("frame_{i}")).collect());
        let pairs = video_pairs(&episode).unwrap();
        assert_eq!(pairs.len(), 15);
        for (i, pair) in pairs.iter().enumerate() {
            assert_eq!(pair.index, i + 1);
            assert_eq!(pair.before, Phase::Named("frame_0".into()));
            assert_eq!(pair.after, Phase::Named(format!("frame_{}", i + 1)));
        }
    }

    #[test]
    fn two_frames_make_one_pair() {
        let mut episode = ep("v", "x", Label::Failure);
        episode.frames = Some(vec!["frame_0".into(), "frame_1".into()]);
        let pairs = video_pairs(&episode).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].index, 1);
    }

    #[test]
    fn too_few_frames_rejected() {
        let mut episode = ep("v", "x", Label::Failure);
        episode.frames = Some(vec!["frame_0".into()]);
        assert!(video_pairs(&episode).is_err());
        episode.frames = None;
        assert!(video_pairs(&episode).is_err());
    }
}
