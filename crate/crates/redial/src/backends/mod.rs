//! Pluggable model-service interfaces: text generation, turn embedding,
//! similarity scoring, and the external trainer hook.
//!
//! Two families of implementations ship with the engine: HTTP clients
//! speaking the common chat-completions / embeddings JSON conventions
//! ([`http`]), and deterministic scripted mocks for tests and offline runs
//! ([`mock`]).

pub mod http;
pub mod mock;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DialogueContext;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request failed after {attempts} attempts: {message}")]
    RetriesExhausted { attempts: u32, message: String },
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("generation {index} of {count} failed: {source}")]
    BatchItem {
        index: usize,
        count: usize,
        #[source]
        source: Box<BackendError>,
    },
    #[error("embedding count mismatch: expected {expected} vectors, got {got}")]
    EmbeddingCount { expected: usize, got: usize },
    #[error("embedding dimension drift: expected {expected}, got {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("no script entry for key {key}")]
    Unscripted { key: String },
    #[error("trainer hook failed: {0}")]
    Trainer(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Decoding controls for a single generation call. The seed is honored by
/// the scripted mock and passed through as advisory for HTTP backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.7,
            max_tokens: 256,
            stop: None,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens < 1 {
            return Err(BackendError::Config("max_tokens must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::Config(
                "temperature must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }

    pub fn with_temperature(&self, temperature: f64) -> Self {
        GenerationParams {
            temperature,
            ..self.clone()
        }
    }
}

/// Connection details for one remote model service. Credentials are named
/// by environment variable and read only at request time, so the endpoint
/// value itself never holds a secret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub base_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

impl BackendEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        BackendEndpoint {
            base_url: base_url.into(),
            api_key_env: None,
            model: model.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_ms == 0 {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(BackendError::Config("base_url must be non-empty".into()));
        }
        Ok(())
    }
}

/// A text-completion service for one fixed model.
pub trait TextGenerator: Send + Sync {
    /// Returns the first completion's text, whitespace-trimmed.
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError>;

    /// `temperatures.len()` independent generations, returned in request
    /// order. Any per-call failure fails the whole batch, naming the index.
    fn generate_many(
        &self,
        prompt: &str,
        temperatures: &[f64],
        base: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        let mut results = Vec::with_capacity(temperatures.len());
        for (index, &temperature) in temperatures.iter().enumerate() {
            match self.generate(prompt, &base.with_temperature(temperature)) {
                Ok(text) => results.push(text),
                Err(err) => {
                    return Err(BackendError::BatchItem {
                        index,
                        count: temperatures.len(),
                        source: Box::new(err),
                    });
                }
            }
        }
        Ok(results)
    }
}

/// A turn-embedding service: one vector per turn of a dialogue context,
/// with a fixed dimension per endpoint.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Exactly `context.len()` vectors of dimension [`Embedder::dim`].
    fn embed_turns(&self, context: &DialogueContext) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// A text-pair similarity service. Scores are symmetric and lie in
/// `[-1, 1]`; `similarity(x, x)` is 1 within 1e-6. Callers clamp to
/// `[0, 1]` before comparing against pruning thresholds.
pub trait SimilarityScorer: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError>;
}

/// The two generation roles updated by preference training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Rewriter,
    Responder,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Rewriter => write!(f, "rewriter"),
            Role::Responder => write!(f, "responder"),
        }
    }
}

/// One training request handed to the external trainer: the exported
/// preference file plus the base model to update. Hyperparameters are
/// passed through opaquely; the engine does not interpret them.
#[derive(Debug, Clone, Serialize)]
pub struct TrainRequest<'a> {
    pub preference_file: &'a Path,
    pub base_model_id: &'a str,
    pub role: Role,
    pub round: u32,
    pub passthrough: &'a serde_json::Value,
}

/// Externalized preference-training hook. Returns the identifier of the
/// updated model.
pub trait TrainerHook: Send + Sync {
    fn train(&self, request: &TrainRequest<'_>) -> Result<String, BackendError>;
}

/// Resolves a (role, model id) pair to a generator client.
pub trait GeneratorProvider: Send + Sync {
    fn resolve(
        &self,
        role: Role,
        model_id: &str,
    ) -> Result<Arc<dyn TextGenerator>, BackendError>;
}

/// A provider that hands out fixed generators regardless of the requested
/// model id. Useful with mocks, where the evolving id is an opaque label.
pub struct StaticProvider {
    rewriter: Arc<dyn TextGenerator>,
    responder: Arc<dyn TextGenerator>,
}

impl StaticProvider {
    pub fn new(rewriter: Arc<dyn TextGenerator>, responder: Arc<dyn TextGenerator>) -> Self {
        StaticProvider {
            rewriter,
            responder,
        }
    }
}

impl GeneratorProvider for StaticProvider {
    fn resolve(
        &self,
        role: Role,
        _model_id: &str,
    ) -> Result<Arc<dyn TextGenerator>, BackendError> {
        Ok(match role {
            Role::Rewriter => Arc::clone(&self.rewriter),
            Role::Responder => Arc::clone(&self.responder),
        })
    }
}
