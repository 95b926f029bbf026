//! Deterministic scripted backends for tests, examples, and offline runs.
//!
//! Every mock is a pure function of its inputs and configured seed, so
//! repeated calls are byte-identical. Generators count their invocations,
//! which lets tests assert how often a pipeline actually reached a backend.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, Embedder, GenerationParams, Role, SimilarityScorer, TextGenerator,
    TrainRequest, TrainerHook,
};
use crate::corpus::DialogueContext;
use crate::metrics::tokenize;

pub(crate) fn sha256_hex(data: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data.as_bytes());
    hex::encode(hasher.finalize())
}

/// Script key for a generation: `sha256(prompt)@temperature`.
pub fn generation_key(prompt: &str, temperature: f64) -> String {
    format!("{}@{}", sha256_hex(prompt), temperature)
}

/// Script key for a text (embeddings, similarity): `sha256(text)`.
pub fn text_key(text: &str) -> String {
    sha256_hex(text)
}

/// Order-free script key for a text pair: the two text keys sorted and
/// joined with `|`.
pub fn similarity_key(a: &str, b: &str) -> String {
    let (ka, kb) = (text_key(a), text_key(b));
    if ka <= kb {
        format!("{ka}|{kb}")
    } else {
        format!("{kb}|{ka}")
    }
}

/// On-disk mock script: generation completions keyed by prompt hash and
/// temperature, per-text embedding seed overrides, and optional pairwise
/// similarity overrides.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub generations: HashMap<String, String>,
    #[serde(default)]
    pub embeddings: HashMap<String, u64>,
    #[serde(default)]
    pub similarities: HashMap<String, f64>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = File::open(path)
            .map_err(|e| BackendError::Config(format!("cannot open script {path:?}: {e}")))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| BackendError::MalformedResponse(format!("script {path:?}: {e}")))
    }
}

type GenerateFn = Box<dyn Fn(&str, f64) -> String + Send + Sync>;

enum Fallback {
    /// Unscripted prompts are an error.
    Error,
    /// Derive a short completion from the prompt hash and seed.
    Derived { seed: u64 },
    Custom(GenerateFn),
}

/// A scripted text generator: exact (prompt, temperature) entries first,
/// then the configured fallback. All calls are counted.
pub struct MockTextGenerator {
    script: HashMap<String, String>,
    fallback: Fallback,
    calls: AtomicUsize,
}

impl MockTextGenerator {
    /// Only scripted entries; anything else is an [`BackendError::Unscripted`].
    pub fn scripted() -> Self {
        MockTextGenerator {
            script: HashMap::new(),
            fallback: Fallback::Error,
            calls: AtomicUsize::new(0),
        }
    }

    /// Scripted entries with a seeded derived-text fallback for everything
    /// else, so arbitrary prompts still get deterministic completions.
    pub fn derived(seed: u64) -> Self {
        MockTextGenerator {
            script: HashMap::new(),
            fallback: Fallback::Derived { seed },
            calls: AtomicUsize::new(0),
        }
    }

    /// Full control: completions computed by the given function.
    pub fn with_fn(f: impl Fn(&str, f64) -> String + Send + Sync + 'static) -> Self {
        MockTextGenerator {
            script: HashMap::new(),
            fallback: Fallback::Custom(Box::new(f)),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_script(script: &MockScript) -> Self {
        MockTextGenerator {
            script: script.generations.clone(),
            fallback: Fallback::Error,
            calls: AtomicUsize::new(0),
        }
    }

    /// Registers a completion for an exact (prompt, temperature) pair.
    pub fn respond(mut self, prompt: &str, temperature: f64, completion: &str) -> Self {
        self.script
            .insert(generation_key(prompt, temperature), completion.to_string());
        self
    }

    /// Number of generate calls served so far (including failures).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn derived_completion(seed: u64, prompt: &str, temperature: f64) -> String {
    const WORDS: [&str; 16] = [
        "system", "update", "driver", "install", "package", "kernel", "network", "restart",
        "config", "mount", "partition", "terminal", "browser", "display", "login", "backup",
    ];
    let digest = sha256_hex(&format!("{seed}|{temperature}|{prompt}"));
    let mut bytes = digest.bytes().map(|b| b as usize);
    let len = 4 + bytes.next().unwrap() % 5;
    let words: Vec<&str> = bytes.take(len).map(|b| WORDS[b % WORDS.len()]).collect();
    words.join(" ")
}

impl TextGenerator for MockTextGenerator {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = generation_key(prompt, params.temperature);
        if let Some(text) = self.script.get(&key) {
            return Ok(text.trim().to_string());
        }
        match &self.fallback {
            Fallback::Error => Err(BackendError::Unscripted { key }),
            Fallback::Derived { seed } => {
                Ok(derived_completion(*seed, prompt, params.temperature))
            }
            Fallback::Custom(f) => Ok(f(prompt, params.temperature).trim().to_string()),
        }
    }
}

/// Planted addressee signal carried by mock embeddings: each turn's vector
/// contains the content tag of the turn it replies to, scaled by
/// `strength`, or by `boost_strength` when the turn text contains
/// `boost_marker`. A trained head can recover reply links from this signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boost_marker: Option<String>,
    #[serde(default = "default_boost")]
    pub boost_strength: f64,
}

fn default_boost() -> f64 {
    2.0
}

impl Default for PlantedSignal {
    fn default() -> Self {
        PlantedSignal {
            strength: 1.0,
            boost_marker: None,
            boost_strength: default_boost(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockEmbedderConfig {
    /// Vector dimension; must be even (one half carries the turn's own
    /// content tag, the other the reply pointer).
    pub dim: usize,
    pub seed: u64,
    /// Scale of deterministic pseudo-noise added to every coordinate.
    pub noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedSignal>,
}

impl Default for MockEmbedderConfig {
    fn default() -> Self {
        MockEmbedderConfig {
            dim: 16,
            seed: 0,
            noise: 0.01,
            planted: None,
        }
    }
}

/// Deterministic turn embedder. Each vector is a pure function of
/// (speaker, text, reply link, config), so the same context always embeds
/// to the same matrix.
pub struct MockEmbedder {
    config: MockEmbedderConfig,
    seed_overrides: HashMap<String, u64>,
}

impl MockEmbedder {
    pub fn new(config: MockEmbedderConfig) -> Result<Self, BackendError> {
        if config.dim == 0 || config.dim % 2 != 0 {
            return Err(BackendError::Config(
                "mock embedder dim must be even and positive".into(),
            ));
        }
        Ok(MockEmbedder {
            config,
            seed_overrides: HashMap::new(),
        })
    }

    pub fn with_seed_overrides(mut self, overrides: HashMap<String, u64>) -> Self {
        self.seed_overrides = overrides;
        self
    }

    fn rng_for(&self, salt: &str, material: &str) -> ChaCha8Rng {
        let digest = Sha256::digest(format!("{}|{salt}|{material}", self.config.seed).as_bytes());
        ChaCha8Rng::from_seed(digest.into())
    }

    /// Unit content tag for a turn, from its speaker and text (or from a
    /// scripted per-text seed override).
    fn tag(&self, speaker: &str, text: &str) -> Vec<f64> {
        let half = self.config.dim / 2;
        let mut rng = match self.seed_overrides.get(&text_key(text)) {
            Some(seed) => ChaCha8Rng::seed_from_u64(*seed),
            None => self.rng_for("tag", &format!("{speaker}\u{1}{text}")),
        };
        let mut v: Vec<f64> = (0..half).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_turns(&self, context: &DialogueContext) -> Result<Vec<Vec<f64>>, BackendError> {
        let half = self.config.dim / 2;
        let tags: Vec<Vec<f64>> = context
            .turns
            .iter()
            .map(|turn| self.tag(&turn.speaker, &turn.text))
            .collect();
        let mut vectors = Vec::with_capacity(context.len());
        for (pos, turn) in context.turns.iter().enumerate() {
            let mut v = Vec::with_capacity(self.config.dim);
            v.extend_from_slice(&tags[pos]);
            match (&self.config.planted, turn.reply_to) {
                (Some(signal), Some(reply_to)) => {
                    let strength = match &signal.boost_marker {
                        Some(marker) if turn.text.contains(marker.as_str()) => {
                            signal.boost_strength
                        }
                        _ => signal.strength,
                    };
                    v.extend(tags[reply_to - 1].iter().map(|x| x * strength));
                }
                _ => {
                    // No planted pointer: fill with an independent content
                    // hash so the block still carries text information.
                    let mut rng = self.rng_for("ptr", &format!("{}\u{1}{}", turn.speaker, turn.text));
                    v.extend((0..half).map(|_| rng.gen_range(-1.0..1.0)));
                }
            }
            if self.config.noise > 0.0 {
                let mut rng =
                    self.rng_for("noise", &format!("{pos}\u{1}{}\u{1}{}", turn.speaker, turn.text));
                for x in v.iter_mut() {
                    *x += self.config.noise * rng.gen_range(-1.0..1.0);
                }
            }
            vectors.push(v);
        }
        Ok(vectors)
    }
}

/// Scripted similarity scorer. Unscripted pairs fall back to token-set
/// Jaccard overlap (symmetric, 1 on identical texts) unless configured to
/// error instead.
pub struct MockSimilarity {
    table: HashMap<String, f64>,
    jaccard_fallback: bool,
}

impl Default for MockSimilarity {
    fn default() -> Self {
        Self::jaccard()
    }
}

impl MockSimilarity {
    pub fn jaccard() -> Self {
        MockSimilarity {
            table: HashMap::new(),
            jaccard_fallback: true,
        }
    }

    pub fn scripted() -> Self {
        MockSimilarity {
            table: HashMap::new(),
            jaccard_fallback: false,
        }
    }

    pub fn from_script(script: &MockScript) -> Self {
        MockSimilarity {
            table: script.similarities.clone(),
            jaccard_fallback: true,
        }
    }

    pub fn score(mut self, a: &str, b: &str, value: f64) -> Self {
        self.table.insert(similarity_key(a, b), value);
        self
    }
}

fn jaccard(a: &str, b: &str) -> f64 {
    let ta: std::collections::HashSet<String> =
        tokenize(a).tokens().iter().cloned().collect();
    let tb: std::collections::HashSet<String> =
        tokenize(b).tokens().iter().cloned().collect();
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.intersection(&tb).count() as f64;
    let union = ta.union(&tb).count() as f64;
    inter / union
}

impl SimilarityScorer for MockSimilarity {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        let key = similarity_key(a, b);
        if let Some(value) = self.table.get(&key) {
            return Ok(*value);
        }
        if self.jaccard_fallback {
            Ok(jaccard(a, b))
        } else {
            Err(BackendError::Unscripted { key })
        }
    }
}

/// One recorded trainer invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainCall {
    pub preference_file: PathBuf,
    pub base_model_id: String,
    pub role: Role,
    pub round: u32,
}

/// Mock trainer: records every call and returns the base model id suffixed
/// with the round number, e.g. `resp-v0+r1`.
#[derive(Default)]
pub struct MockTrainerHook {
    calls: Mutex<Vec<TrainCall>>,
}

impl MockTrainerHook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> Vec<TrainCall> {
        self.calls.lock().unwrap().clone()
    }
}

impl TrainerHook for MockTrainerHook {
    fn train(&self, request: &TrainRequest<'_>) -> Result<String, BackendError> {
        self.calls.lock().unwrap().push(TrainCall {
            preference_file: request.preference_file.to_path_buf(),
            base_model_id: request.base_model_id.to_string(),
            role: request.role,
            round: request.round,
        });
        Ok(format!("{}+r{}", request.base_model_id, request.round))
    }
}
