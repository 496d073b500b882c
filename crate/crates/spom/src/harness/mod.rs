//! Training, evaluation, and experiment orchestration.

mod ablation;
mod significance;
mod video;

pub use ablation::{run_ablation, standard_conditions, AblationCondition, AblationRow, AblationTable};
pub use significance::{normal_sf, significance_test};
pub use video::{classify_video, VideoOutcome};

use crate::dataset::{DatasetSplit, Episode};
use crate::decoder::{
    flat_gradients, forward, forward_on, round_trip_storage, AttentionMode, DecoderConfig,
    DecoderParams,
};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Tape};
use crate::representation::{
    fetch_episode_features, EmbeddingProvider, EpisodeFeatures, Group, SourceRegistry,
};
use crate::rng::{fnv1a64, SplitMix64};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Full training configuration. The decoder shape rides along so one value
/// describes a run end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: AttentionMode,
    pub enabled_groups: BTreeSet<Group>,
    pub threshold: f64,
    pub decoder: DecoderConfig,
}

fn all_groups() -> BTreeSet<Group> {
    Group::ALL.into_iter().collect()
}

impl TrainConfig {
    /// The published full-scale settings: Adam(0.9, 0.999), lr 1e-6,
    /// weight decay 1e-1, batch 32, 150 epochs.
    pub fn paper() -> Self {
        Self {
            lr: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-1,
            decoupled_weight_decay: true,
            adam_epsilon: 1e-8,
            batch_size: 32,
            epochs: 150,
            seed: 0,
            mode: AttentionMode::Cross,
            enabled_groups: all_groups(),
            threshold: 0.5,
            decoder: DecoderConfig::default(),
        }
    }

    /// Scaled-down settings that train in seconds on one CPU core.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            epochs: 30,
            seed: 7,
            decoder: DecoderConfig {
                d_model: 32,
                d_k: 32,
                d_v: 32,
                mlp_hidden: vec![32, 16],
                ..DecoderConfig::default()
            },
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.enabled_groups.is_empty() {
            return Err(Error::Config("enabled_groups must be nonempty".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        self.decoder.validate()
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            decoupled_weight_decay: self.decoupled_weight_decay,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Digest of the effective configuration, recorded into outputs and
/// checkpoints so artifacts can be matched to the run that made them.
pub fn config_digest(config: &TrainConfig, registry: &SourceRegistry) -> u64 {
    let canonical = serde_json::json!({
        "train": config,
        "registry": registry.config(),
    });
    fnv1a64(canonical.to_string().as_bytes())
}

/// Binary confusion counts at a decision threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
    pub threshold: f64,
}

impl ConfusionMatrix {
    pub fn new(threshold: f64) -> Self {
        Self {
            true_pos: 0,
            false_pos: 0,
            true_neg: 0,
            false_neg: 0,
            threshold,
        }
    }

    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self {
            true_pos: tp,
            false_pos: fp,
            true_neg: tn,
            false_neg: fn_,
            threshold: 0.5,
        }
    }

    pub fn record(&mut self, predicted_success: bool, actually_success: bool) {
        match (predicted_success, actually_success) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_pos += 1,
            (false, false) => self.true_neg += 1,
            (false, true) => self.false_neg += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn correct(&self) -> usize {
        self.true_pos + self.true_neg
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        self.correct() as f64 / self.total() as f64
    }
}

/// Everything one training run produces besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation accuracy per epoch.
    pub val_accuracy: Vec<f64>,
    /// Epoch with the highest validation accuracy; ties go to the
    /// earliest epoch.
    pub best_epoch: usize,
    /// Test confusion matrix of the best-epoch checkpoint.
    pub test: ConfusionMatrix,
    pub seed: u64,
    pub config_digest: u64,
}

/// Data a run trains and evaluates on.
pub struct TrainInputs<'a> {
    pub episodes: &'a [Episode],
    pub split: &'a DatasetSplit,
    pub provider: &'a dyn EmbeddingProvider,
    /// Unfiltered registry; `enabled_groups` filtering happens inside.
    pub registry: &'a SourceRegistry,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub result: RunResult,
    /// Best-epoch parameters after a round trip through the checkpoint
    /// storage precision: saving them yields bytes that load back to
    /// exactly these values.
    pub params: DecoderParams,
}

fn episode_index(episodes: &[Episode]) -> BTreeMap<&str, &Episode> {
    episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect()
}

fn fetch_all<'a>(
    ids: impl Iterator<Item = &'a String>,
    index: &BTreeMap<&str, &Episode>,
    provider: &dyn EmbeddingProvider,
    registry: &SourceRegistry,
) -> Result<BTreeMap<String, EpisodeFeatures>> {
    let mut features = BTreeMap::new();
    for id in ids {
        if !features.contains_key(id) {
            let episode = index
                .get(id.as_str())
                .ok_or_else(|| Error::Config(format!("split references unknown episode '{id}'")))?;
            let f = fetch_episode_features(
                provider,
                registry,
                id,
                &episode.before_phase(),
                &episode.after_phase(),
            )?;
            features.insert(id.clone(), f);
        }
    }
    Ok(features)
}

fn accuracy_over(
    params: &DecoderParams,
    mode: AttentionMode,
    threshold: f64,
    ids: &[String],
    features: &BTreeMap<String, EpisodeFeatures>,
    index: &BTreeMap<&str, &Episode>,
) -> Result<ConfusionMatrix> {
    let mut matrix = ConfusionMatrix::new(threshold);
    for id in ids {
        let episode = index
            .get(id.as_str())
            .ok_or_else(|| Error::Config(format!("split references unknown episode '{id}'")))?;
        let fs = &features[id];
        let out = forward(fs, params, mode)?;
        matrix.record(out.p_success >= threshold, episode.label.is_success());
    }
    Ok(matrix)
}

/// Mini-batch training with per-epoch validation and best-epoch selection.
/// Deterministic for a fixed `(config, data, seed)`.
pub fn train(inputs: &TrainInputs, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let filtered = inputs.registry.with_groups(&config.enabled_groups);
    let index = episode_index(inputs.episodes);
    let split = inputs.split;
    let all_ids = split.train.iter().chain(&split.val).chain(&split.test);
    let features = fetch_all(all_ids, &index, inputs.provider, &filtered)?;

    let mut params = DecoderParams::init(&filtered, &config.decoder, config.seed)?;
    let mut adam = AdamState::new(params.param_count(), config.adam_config());
    let mut shuffle_rng = SplitMix64::derive(config.seed, "batch-shuffle");

    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut val_accuracy = Vec::with_capacity(config.epochs);
    let mut best_epoch = 0usize;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_params = params.clone();

    let mut order: Vec<String> = split.train.clone();
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grad = vec![0.0; params.param_count()];
            let batch_scale = 1.0 / batch.len() as f64;

            for id in batch {
                let episode = index
                    .get(id.as_str())
                    .ok_or_else(|| Error::Config(format!("split references unknown episode '{id}'")))?;
                let fs = &features[id];

                let diverged = |loss: f64, params: &DecoderParams| {
                    let flat = params.flatten();
                    let param_norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
                    Error::Diverged {
                        epoch,
                        batch: batch_idx,
                        loss,
                        param_norm,
                    }
                };
                let mut tape = Tape::new();
                let staged = params.stage(&mut tape);
                let target = episode.label.as_u8() as usize;
                // A non-finite value anywhere in the step means the run
                // diverged; report it with training diagnostics instead of
                // the bare kernel error.
                let loss_node = forward_on(&mut tape, &staged, &params, fs, config.mode)
                    .and_then(|graph| tape.softmax_cross_entropy(graph.logits, target))
                    .map_err(|e| match e {
                        Error::Numeric { .. } => diverged(f64::NAN, &params),
                        other => other,
                    })?;
                let loss = tape.value(loss_node).at(0, 0);
                if !loss.is_finite() {
                    return Err(diverged(loss, &params));
                }
                epoch_loss += loss;

                let grads = tape.backward(loss_node)?;
                for (g, dv) in grad.iter_mut().zip(flat_gradients(&params, &staged, &grads)) {
                    *g += dv * batch_scale;
                }
            }

            let mut flat = params.flatten();
            adam_step(&mut flat, &grad, &mut adam)?;
            params.unflatten_into(&flat)?;
        }

        train_loss.push(epoch_loss / split.train.len().max(1) as f64);
        let val =
            accuracy_over(&params, config.mode, config.threshold, &split.val, &features, &index)?;
        let acc = val.accuracy();
        val_accuracy.push(acc);
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }

    // Test evaluation runs on the storage-precision weights, the exact values
    // a saved checkpoint loads back.
    let stored = round_trip_storage(&best_params)?;
    let test = accuracy_over(&stored, config.mode, config.threshold, &split.test, &features, &index)?;

    Ok(TrainOutcome {
        result: RunResult {
            train_loss,
            val_accuracy,
            best_epoch,
            test,
            seed: config.seed,
            config_digest: config_digest(config, inputs.registry),
        },
        params: stored,
    })
}

/// Evaluation options.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub threshold: f64,
    /// When true, episodes whose features cannot be fetched are reported
    /// and excluded instead of failing the evaluation.
    pub skip_missing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            skip_missing: false,
        }
    }
}

/// Evaluation result plus any per-episode feature failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub matrix: ConfusionMatrix,
    pub skipped: Vec<(String, String)>,
}

/// Tally predictions over episodes: predicted success iff
/// `p_success >= threshold`.
pub fn evaluate(
    params: &DecoderParams,
    mode: AttentionMode,
    provider: &dyn EmbeddingProvider,
    registry: &SourceRegistry,
    episodes: &[Episode],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let mut matrix = ConfusionMatrix::new(options.threshold);
    let mut skipped = Vec::new();
    for episode in episodes {
        let features = match fetch_episode_features(
            provider,
            registry,
            &episode.episode_id,
            &episode.before_phase(),
            &episode.after_phase(),
        ) {
            Ok(f) => f,
            Err(e) if options.skip_missing => {
                skipped.push((episode.episode_id.clone(), e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let out = forward(&features, params, mode)?;
        matrix.record(out.p_success >= options.threshold, episode.label.is_success());
    }
    Ok(EvalReport { matrix, skipped })
}

/// Aggregate over `n_seeds` runs: seeds `config.seed .. config.seed + n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single seed.
    pub std_accuracy: f64,
}

/// Train and evaluate once per seed; report mean and sample standard
/// deviation of test accuracy.
pub fn seed_sweep(inputs: &TrainInputs, config: &TrainConfig, n_seeds: usize) -> Result<SweepResult> {
    if n_seeds == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    let mut seeds = Vec::with_capacity(n_seeds);
    let mut accuracies = Vec::with_capacity(n_seeds);
    for i in 0..n_seeds {
        let seed = config.seed + i as u64;
        let run_config = TrainConfig {
            seed,
            ..config.clone()
        };
        let outcome = train(inputs, &run_config)?;
        seeds.push(seed);
        accuracies.push(outcome.result.test.accuracy());
    }
    let mean = accuracies.iter().sum::<f64>() / n_seeds as f64;
    let std = if n_seeds < 2 {
        0.0
    } else {
        let ss: f64 = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum();
        (ss / (n_seeds - 1) as f64).sqrt()
    };
    Ok(SweepResult {
        seeds,
        accuracies,
        mean_accuracy: mean,
        std_accuracy: std,
    })
}

/// Probability of success for one episode under a trained model.
pub fn predict(
    params: &DecoderParams,
    mode: AttentionMode,
    provider: &dyn EmbeddingProvider,
    registry: &SourceRegistry,
    episode: &Episode,
) -> Result<f64> {
    let features = fetch_episode_features(
        provider,
        registry,
        &episode.episode_id,
        &episode.before_phase(),
        &episode.after_phase(),
    )?;
    Ok(forward(&features, params, mode)?.p_success)
}
