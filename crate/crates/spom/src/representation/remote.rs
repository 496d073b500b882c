//! Remote embedding service client.
//!
//! POSTs `{source_id, payload_type, payload}` to `<endpoint>/v1/embed` and
//! expects `{dim, values}` back. Responses are cached in the on-disk block
//! layout, so each `(episode, phase, source)` hits the network once.

use crate::error::{Error, Result};
use crate::representation::{block_path, lrep, FeatureBlock, Phase, Provenance};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

/// What gets embedded for a given episode phase.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Text(String),
    ImagePath(String),
}

/// Resolves the text or image path behind an `(episode, phase)` pair.
pub trait PayloadSource: Send + Sync {
    fn payload_for(&self, episode_id: &str, phase: &Phase) -> Result<Payload>;
}

/// Payloads looked up from manifest data: instruction text, caption
/// sidecars, and image files under a conventional root.
#[derive(Debug, Clone, Default)]
pub struct ManifestPayloads {
    instructions: BTreeMap<String, String>,
    captions: BTreeMap<(String, String), String>,
    image_root: Option<PathBuf>,
}

impl ManifestPayloads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn set_instruction(&mut self, episode_id: &str, text: impl Into<String>) {
        self.instructions.insert(episode_id.to_string(), text.into());
    }

    pub fn set_caption(&mut self, episode_id: &str, phase: &Phase, text: impl Into<String>) {
        self.captions
            .insert((episode_id.to_string(), phase.dir_name().into_owned()), text.into());
    }
}

impl PayloadSource for ManifestPayloads {
    fn payload_for(&self, episode_id: &str, phase: &Phase) -> Result<Payload> {
        match phase {
            Phase::Instruction => self
                .instructions
                .get(episode_id)
                .map(|t| Payload::Text(t.clone()))
                .ok_or_else(|| Error::Remote(format!("no instruction text for '{episode_id}'"))),
            Phase::CaptionBefore | Phase::CaptionAfter => self
                .captions
                .get(&(episode_id.to_string(), phase.dir_name().into_owned()))
                .map(|t| Payload::Text(t.clone()))
                .ok_or_else(|| Error::MissingCaption {
                    episode_id: episode_id.to_string(),
                    phase: phase.dir_name().into_owned(),
                }),
            other => {
                let root = self.image_root.as_ref().ok_or_else(|| {
                    Error::Remote("no image root configured for image phases".into())
                })?;
                let path = root
                    .join(episode_id)
                    .join(format!("{}.png", other.dir_name()));
                Ok(Payload::ImagePath(path.display().to_string()))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    values: Vec<f32>,
}

/// HTTP-backed provider with retry, backoff, and a file cache.
pub struct RemoteProvider<S> {
    endpoint: String,
    cache_root: PathBuf,
    payloads: S,
    timeout: Duration,
    max_retries: u32,
    backoff_base: Duration,
}

impl<S: PayloadSource> RemoteProvider<S> {
    pub fn new(endpoint: impl Into<String>, cache_root: impl Into<PathBuf>, payloads: S) -> Self {
        Self {
            endpoint: endpoint.into(),
            cache_root: cache_root.into(),
            payloads,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }

    /// Shorten timeouts/backoff, mostly for tests.
    pub fn with_timing(mut self, timeout: Duration, backoff_base: Duration) -> Self {
        self.timeout = timeout;
        self.backoff_base = backoff_base;
        self
    }

    fn request(&self, source_id: &str, payload: &Payload) -> Result<EmbedResponse> {
        let (payload_type, payload_value) = match payload {
            Payload::Text(t) => ("text", t.as_str()),
            Payload::ImagePath(p) => ("image_path", p.as_str()),
        };
        let body = serde_json::json!({
            "source_id": source_id,
            "payload_type": payload_type,
            "payload": payload_value,
        });
        let url = format!("{}/v1/embed", self.endpoint.trim_end_matches('/'));
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();

        let mut last_err = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            match agent.post(&url).send_json(&body) {
                Ok(resp) => {
                    let parsed: EmbedResponse = resp
                        .into_json()
                        .map_err(|e| Error::Remote(format!("bad response body: {e}")))?;
                    return Ok(parsed);
                }
                Err(ureq::Error::Status(code, _)) if code < 500 => {
                    return Err(Error::Remote(format!("{url}: status {code}")));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Remote(format!(
            "{url}: giving up after {} retries: {last_err}",
            self.max_retries
        )))
    }
}

impl<S: PayloadSource> super::EmbeddingProvider for RemoteProvider<S> {
    fn get(&self, episode_id: &str, phase: &Phase, source_id: &str) -> Result<FeatureBlock> {
        let cache = block_path(&self.cache_root, episode_id, phase, source_id);
        if cache.exists() {
            return lrep::read_block(&cache);
        }
        let payload = self.payloads.payload_for(episode_id, phase)?;
        let resp = self.request(source_id, &payload)?;
        if resp.values.len() != resp.dim {
            return Err(Error::Remote(format!(
                "service declared dim {} but sent {} values",
                resp.dim,
                resp.values.len()
            )));
        }
        let block = FeatureBlock {
            source_id: source_id.to_string(),
            dim: resp.dim,
            values: resp.values,
            provenance: Provenance::Remote,
        };
        lrep::write_block(&cache, &block)?;
        Ok(block)
    }
}
