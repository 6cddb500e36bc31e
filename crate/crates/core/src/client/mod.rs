//! Model backends.
//!
//! A [`Backend`] turns one probe prompt into raw response text. Three kinds
//! exist: [`live::OpenAiCompatBackend`] talks to an OpenAI-compatible
//! chat-completions endpoint, [`scripted::ScriptedBackend`] answers from the
//! inventory itself, and [`scripted::FixtureBackend`] replays recorded
//! responses by cache digest. [`cache::CachedBackend`] adds a persistent
//! response cache in front of any of them.

pub mod cache;
pub mod live;
pub mod scripted;

use std::collections::HashMap;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::ProbeTask;

pub use cache::{CachedBackend, ResponseCache};
pub use live::{OpenAiCompatBackend, RetryPolicy};
pub use scripted::{Behavior, FixtureBackend, ScriptedBackend};

pub const DEFAULT_ENDPOINT: &str = "https://openrouter.ai/api/v1";
pub const API_KEY_ENV: &str = "PSYCHOPROBE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
}

fn default_endpoint() -> String {
    DEFAULT_ENDPOINT.to_string()
}

fn default_max_output_tokens() -> u32 {
    512
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>) -> Self {
        ModelSpec {
            model_id: model_id.into(),
            endpoint: default_endpoint(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
        }
    }
}

/// One prompt to complete, with enough metadata for scripted backends to
/// look up ground truth. Live backends only read `prompt`.
#[derive(Debug, Clone, Copy)]
pub struct Probe<'a> {
    pub task: ProbeTask,
    pub prompt: &'a str,
    pub inventory_name: &'a str,
    pub item_index: u32,
    pub target_score: Option<i64>,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no scripted fixture for digest {0}")]
    FixtureMiss(String),
    #[error("missing API key: set {API_KEY_ENV}")]
    MissingApiKey,
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
    #[error("no backend configured for model {0:?}")]
    UnknownModel(String),
    #[error("{0}")]
    Scripted(String),
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, model: &ModelSpec, probe: &Probe<'_>) -> Result<String, ClientError>;
}

/// Content address of a response: SHA-256 over model, task, prompt and
/// temperature, each length-prefixed so field boundaries cannot shift.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub digest: String,
}

impl CacheKey {
    pub fn new(model_id: &str, task: ProbeTask, prompt: &str, temperature: f64) -> Self {
        let mut hasher = Sha256::new();
        let temperature = format!("{temperature:?}");
        for field in [model_id, task.as_str(), prompt, temperature.as_str()] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        CacheKey {
            digest: hex::encode(hasher.finalize()),
        }
    }

    pub fn for_probe(model: &ModelSpec, probe: &Probe<'_>) -> Self {
        Self::new(&model.model_id, probe.task, probe.prompt, model.temperature)
    }
}

/// Digest of a prompt alone, recorded in run logs.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Resolves the backend for each model id.
#[derive(Clone, Default)]
pub struct BackendSet {
    default: Option<Arc<dyn Backend>>,
    per_model: HashMap<String, Arc<dyn Backend>>,
}

impl BackendSet {
    pub fn uniform(backend: Arc<dyn Backend>) -> Self {
        BackendSet {
            default: Some(backend),
            per_model: HashMap::new(),
        }
    }

    pub fn with_model(mut self, model_id: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        self.per_model.insert(model_id.into(), backend);
        self
    }

    pub fn resolve(&self, model_id: &str) -> Result<Arc<dyn Backend>, ClientError> {
        self.per_model
            .get(model_id)
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| ClientError::UnknownModel(model_id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_sensitivity() {
        let base = CacheKey::new("m", ProbeTask::KeywordMemorization, "prompt", 0.0);
        assert_eq!(base, CacheKey::new("m", ProbeTask::KeywordMemorization, "prompt", 0.0));
        assert_ne!(base, CacheKey::new("m", ProbeTask::KeywordMemorization, "prompt ", 0.0));
        assert_ne!(base, CacheKey::new("m", ProbeTask::VerbatimMemorization, "prompt", 0.0));
        assert_ne!(base, CacheKey::new("m2", ProbeTask::KeywordMemorization, "prompt", 0.0));
        assert_ne!(base, CacheKey::new("m", ProbeTask::KeywordMemorization, "prompt", 0.7));
        // Length prefixes keep "ab"+"c" apart from "a"+"bc".
        assert_ne!(
            CacheKey::new("ab", ProbeTask::KeywordMemorization, "c", 0.0),
            CacheKey::new("a", ProbeTask::KeywordMemorization, "bc", 0.0)
        );
        assert_eq!(base.digest.len(), 64);
    }

    #[test]
    fn model_spec_defaults() {
        let spec: ModelSpec = serde_json::from_str(r#"{"model_id": "gpt-4o"}"#).unwrap();
        assert_eq!(spec, ModelSpec::new("gpt-4o"));
        assert_eq!(spec.temperature, 0.0);
    }
}
