//! Video-episode classification.
//!
//! A video episode is judged by evaluating the image pair `(frame 0,
//! frame n)` for every n and calling the whole clip a success as soon as
//! any pair is predicted successful.

use crate::dataset::{video_pairs, Episode, Label};
use crate::decoder::{forward, AttentionMode, DecoderParams};
use crate::error::Result;
use crate::representation::{fetch_episode_features, EmbeddingProvider, SourceRegistry};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoOutcome {
    pub episode_id: String,
    pub predicted_success: bool,
    /// Pair index `n` of the first success, when any.
    pub first_success: Option<usize>,
    /// `(pair index, p_success)` for every pair, in order.
    pub pair_probs: Vec<(usize, f64)>,
}

impl VideoOutcome {
    pub fn predicted_label(&self) -> Label {
        if self.predicted_success {
            Label::Success
        } else {
            Label::Failure
        }
    }
}

/// Evaluate every `(frame 0, frame n)` pair in order; success iff any pair
/// crosses the threshold.
pub fn classify_video(
    params: &DecoderParams,
    mode: AttentionMode,
    provider: &dyn EmbeddingProvider,
    registry: &SourceRegistry,
    episode: &Episode,
    threshold: f64,
) -> Result<VideoOutcome> {
    let pairs = video_pairs(episode)?;
    let mut pair_probs = Vec::with_capacity(pairs.len());
    let mut first_success = None;
    for pair in &pairs {
        let features = fetch_episode_features(
            provider,
            registry,
            &episode.episode_id,
            &pair.before,
            &pair.after,
        )?;
        let p = forward(&features, params, mode)?.p_success;
        if p >= threshold && first_success.is_none() {
            first_success = Some(pair.index);
        }
        pair_probs.push((pair.index, p));
    }
    Ok(VideoOutcome {
        episode_id: episode.episode_id.clone(),
        predicted_success: first_success.is_some(),
        first_success,
        pair_probs,
    })
}
