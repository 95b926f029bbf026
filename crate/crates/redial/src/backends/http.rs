//! HTTP clients speaking the common chat-completions and embeddings JSON
//! conventions, plus a subprocess trainer hook.
//!
//! Transport is abstracted behind [`HttpTransport`] so retry behavior can be
//! tested against scripted responses without a network.

use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    BackendEndpoint, BackendError, Embedder, GenerationParams, GeneratorProvider, Role,
    SimilarityScorer, TextGenerator, TrainRequest, TrainerHook,
};
use crate::corpus::DialogueContext;

/// A raw HTTP response: status plus body text.
#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal POST-JSON transport. `api_key`, when present, is sent as a
/// bearer token and must never be logged or stored by implementations.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, String>;
}

/// Production transport backed by `ureq`.
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, String> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let mut request = agent.post(url).set("Content-Type", "application/json");
        if let Some(key) = api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        match request.send_string(&body.to_string()) {
            Ok(response) => {
                let status = response.status();
                let body = response.into_string().map_err(|e| e.to_string())?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Status(status, response)) => {
                let body = response.into_string().unwrap_or_default();
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Transport(err)) => Err(err.to_string()),
        }
    }
}

/// Exponential backoff delay before retry `attempt` (0-based).
pub fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    base.saturating_mul(1u32 << attempt.min(16))
}

fn is_retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

fn api_key(endpoint: &BackendEndpoint) -> Option<String> {
    endpoint
        .api_key_env
        .as_deref()
        .and_then(|name| std::env::var(name).ok())
}

/// POSTs with retry on transport failures and retryable statuses (429,
/// 5xx). Exhausting retries or hitting a terminal non-2xx status is an
/// error; the parsed 2xx body is returned otherwise.
fn post_with_retry(
    transport: &dyn HttpTransport,
    endpoint: &BackendEndpoint,
    path: &str,
    body: &Value,
) -> Result<Value, BackendError> {
    let url = format!("{}/{}", endpoint.base_url.trim_end_matches('/'), path);
    let key = api_key(endpoint);
    let attempts = endpoint.max_retries + 1;
    let mut last_failure = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(backoff_delay(
                Duration::from_millis(endpoint.backoff_base_ms),
                attempt - 1,
            ));
        }
        match transport.post_json(&url, key.as_deref(), body, endpoint.timeout()) {
            Ok(response) if (200..300).contains(&response.status) => {
                return serde_json::from_str(&response.body)
                    .map_err(|e| BackendError::MalformedResponse(e.to_string()));
            }
            Ok(response) if is_retryable_status(response.status) => {
                last_failure = format!("status {}", response.status);
            }
            Ok(response) => {
                return Err(BackendError::Status {
                    status: response.status,
                    body: response.body,
                });
            }
            Err(message) => last_failure = message,
        }
    }
    Err(BackendError::RetriesExhausted {
        attempts,
        message: last_failure,
    })
}

/// Chat-completions client for one endpoint and model.
pub struct HttpTextGenerator {
    endpoint: BackendEndpoint,
    transport: Arc<dyn HttpTransport>,
}

impl HttpTextGenerator {
    pub fn new(endpoint: BackendEndpoint) -> Self {
        Self::with_transport(endpoint, Arc::new(UreqTransport))
    }

    pub fn with_transport(endpoint: BackendEndpoint, transport: Arc<dyn HttpTransport>) -> Self {
        HttpTextGenerator {
            endpoint,
            transport,
        }
    }
}

impl TextGenerator for HttpTextGenerator {
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        params.validate()?;
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(stop) = &params.stop {
            body["stop"] = json!(stop);
        }
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        let value = post_with_retry(
            self.transport.as_ref(),
            &self.endpoint,
            "chat/completions",
            &body,
        )?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                BackendError::MalformedResponse(
                    "missing choices[0].message.content".into(),
                )
            })?;
        Ok(content.trim().to_string())
    }
}

fn embed_texts(
    transport: &dyn HttpTransport,
    endpoint: &BackendEndpoint,
    inputs: &[String],
) -> Result<Vec<Vec<f64>>, BackendError> {
    let body = json!({"model": endpoint.model, "input": inputs});
    let value = post_with_retry(transport, endpoint, "embeddings", &body)?;
    let data = value
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::MalformedResponse("missing data array".into()))?;
    if data.len() != inputs.len() {
        return Err(BackendError::EmbeddingCount {
            expected: inputs.len(),
            got: data.len(),
        });
    }
    // Responses may arrive in any order; the index field is authoritative.
    let mut vectors: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
    for item in data {
        let index = item
            .get("index")
            .and_then(Value::as_u64)
            .ok_or_else(|| BackendError::MalformedResponse("missing embedding index".into()))?
            as usize;
        let embedding = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::MalformedResponse("missing embedding array".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| BackendError::MalformedResponse("non-numeric embedding".into()))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if index >= inputs.len() || vectors[index].is_some() {
            return Err(BackendError::MalformedResponse(format!(
                "bad embedding index {index}"
            )));
        }
        vectors[index] = Some(embedding);
    }
    Ok(vectors.into_iter().map(|v| v.unwrap()).collect())
}

/// Embeddings client that embeds each turn's `Speaker k: text` line in one
/// batched request. The dimension is declared up front and enforced on
/// every response.
pub struct HttpEmbedder {
    endpoint: BackendEndpoint,
    dim: usize,
    transport: Arc<dyn HttpTransport>,
}

impl HttpEmbedder {
    pub fn new(endpoint: BackendEndpoint, dim: usize) -> Self {
        Self::with_transport(endpoint, dim, Arc::new(UreqTransport))
    }

    pub fn with_transport(
        endpoint: BackendEndpoint,
        dim: usize,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        HttpEmbedder {
            endpoint,
            dim,
            transport,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_turns(&self, context: &DialogueContext) -> Result<Vec<Vec<f64>>, BackendError> {
        let lines = crate::corpus::speaker_lines(context);
        let vectors = embed_texts(self.transport.as_ref(), &self.endpoint, &lines)?;
        for vector in &vectors {
            if vector.len() != self.dim {
                return Err(BackendError::DimensionDrift {
                    expected: self.dim,
                    got: vector.len(),
                });
            }
        }
        Ok(vectors)
    }
}

/// Similarity via embedding both texts and taking cosine similarity.
pub struct HttpSimilarity {
    endpoint: BackendEndpoint,
    transport: Arc<dyn HttpTransport>,
}

impl HttpSimilarity {
    pub fn new(endpoint: BackendEndpoint) -> Self {
        Self::with_transport(endpoint, Arc::new(UreqTransport))
    }

    pub fn with_transport(endpoint: BackendEndpoint, transport: Arc<dyn HttpTransport>) -> Self {
        HttpSimilarity {
            endpoint,
            transport,
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl SimilarityScorer for HttpSimilarity {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        let vectors = embed_texts(
            self.transport.as_ref(),
            &self.endpoint,
            &[a.to_string(), b.to_string()],
        )?;
        Ok(cosine(&vectors[0], &vectors[1]))
    }
}

/// Provider that builds chat clients on demand, substituting the evolving
/// model id into a shared endpoint template per role.
pub struct HttpGeneratorProvider {
    rewriter: BackendEndpoint,
    responder: BackendEndpoint,
    transport: Arc<dyn HttpTransport>,
}

impl HttpGeneratorProvider {
    pub fn new(rewriter: BackendEndpoint, responder: BackendEndpoint) -> Self {
        HttpGeneratorProvider {
            rewriter,
            responder,
            transport: Arc::new(UreqTransport),
        }
    }
}

impl GeneratorProvider for HttpGeneratorProvider {
    fn resolve(
        &self,
        role: Role,
        model_id: &str,
    ) -> Result<Arc<dyn TextGenerator>, BackendError> {
        let mut endpoint = match role {
            Role::Rewriter => self.rewriter.clone(),
            Role::Responder => self.responder.clone(),
        };
        endpoint.model = model_id.to_string();
        Ok(Arc::new(HttpTextGenerator::with_transport(
            endpoint,
            Arc::clone(&self.transport),
        )))
    }
}

/// Trainer hook that runs an external command. The JSON-encoded
/// [`TrainRequest`] is written to the child's stdin; the new model id is
/// read from the last non-empty stdout line.
pub struct CommandTrainerHook {
    program: String,
    args: Vec<String>,
}

impl CommandTrainerHook {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandTrainerHook {
            program: program.into(),
            args,
        }
    }
}

impl TrainerHook for CommandTrainerHook {
    fn train(&self, request: &TrainRequest<'_>) -> Result<String, BackendError> {
        use std::io::Write;
        let payload = serde_json::to_string(request)
            .map_err(|e| BackendError::Trainer(format!("request encoding: {e}")))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| BackendError::Trainer(format!("spawn {}: {e}", self.program)))?;
        child
            .stdin
            .as_mut()
            .expect("stdin was piped")
            .write_all(payload.as_bytes())
            .map_err(|e| BackendError::Trainer(format!("write request: {e}")))?;
        let output = child
            .wait_with_output()
            .map_err(|e| BackendError::Trainer(format!("wait: {e}")))?;
        if !output.status.success() {
            return Err(BackendError::Trainer(format!(
                "command exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let model_id = stdout
            .lines()
            .rev()
            .map(str::trim)
            .find(|line| !line.is_empty())
            .ok_or_else(|| BackendError::Trainer("hook printed no model id".into()))?;
        Ok(model_id.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Scripted transport: pops one response per call, recording requests.
    struct ScriptedTransport {
        responses: Mutex<Vec<Result<HttpResponse, String>>>,
        calls: Mutex<Vec<Value>>,
    }

    impl ScriptedTransport {
        fn new(responses: Vec<Result<HttpResponse, String>>) -> Self {
            ScriptedTransport {
                responses: Mutex::new(responses),
                calls: Mutex::new(Vec::new()),
            }
        }

        fn call_count(&self) -> usize {
            self.calls.lock().unwrap().len()
        }
    }

    impl HttpTransport for ScriptedTransport {
        fn post_json(
            &self,
            _url: &str,
            _api_key: Option<&str>,
            body: &Value,
            _timeout: Duration,
        ) -> Result<HttpResponse, String> {
            self.calls.lock().unwrap().push(body.clone());
            let mut responses = self.responses.lock().unwrap();
            if responses.is_empty() {
                Err("script exhausted".into())
            } else {
                responses.remove(0)
            }
        }
    }

    fn fast_endpoint() -> BackendEndpoint {
        BackendEndpoint {
            backoff_base_ms: 1,
            ..BackendEndpoint::new("http://example.test/v1", "test-model")
        }
    }

    fn ok_completion(text: &str) -> Result<HttpResponse, String> {
        Ok(HttpResponse {
            status: 200,
            body: json!({"choices": [{"message": {"content": text}}]}).to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpResponse, String> {
        Ok(HttpResponse {
            status: code,
            body: "{}".into(),
        })
    }

    #[test]
    fn retries_on_429_then_succeeds() {
        let transport = Arc::new(ScriptedTransport::new(vec![
            status(429),
            status(429),
            ok_completion("  recovered  "),
        ]));
        let gen = HttpTextGenerator::with_transport(fast_endpoint(), transport.clone());
        let text = gen.generate("p", &GenerationParams::default()).unwrap();
        assert_eq!(text, "recovered");
        assert_eq!(transport.call_count(), 3);
    }

    #[test]
    fn terminal_status_is_not_retried() {
        let transport = Arc::new(ScriptedTransport::new(vec![status(401)]));
        let gen = HttpTextGenerator::with_transport(fast_endpoint(), transport.clone());
        let err = gen.generate("p", &GenerationParams::default()).unwrap_err();
        assert!(matches!(err, BackendError::Status { status: 401, .. }));
        assert_eq!(transport.call_count(), 1);
    }

    #[test]
    fn retry_count_respects_max_retries() {
        let transport = Arc::new(ScriptedTransport::new(vec![
            status(500),
            status(500),
            status(500),
            status(500),
            status(500),
        ]));
        let mut endpoint = fast_endpoint();
        endpoint.max_retries = 2;
        let gen = HttpTextGenerator::with_transport(endpoint, transport.clone());
        let err = gen.generate("p", &GenerationParams::default()).unwrap_err();
        assert!(matches!(err, BackendError::RetriesExhausted { attempts: 3, .. }));
        assert_eq!(transport.call_count(), 3);
    }

    #[test]
    fn malformed_body_is_distinct_error() {
        let transport = Arc::new(ScriptedTransport::new(vec![Ok(HttpResponse {
            status: 200,
            body: json!({"unexpected": true}).to_string(),
        })]));
        let gen = HttpTextGenerator::with_transport(fast_endpoint(), transport);
        let err = gen.generate("p", &GenerationParams::default()).unwrap_err();
        assert!(matches!(err, BackendError::MalformedResponse(_)));
    }

    #[test]
    fn backoff_delays_are_non_decreasing() {
        let base = Duration::from_millis(100);
        let mut last = Duration::ZERO;
        for attempt in 0..10 {
            let delay = backoff_delay(base, attempt);
            assert!(delay >= last);
            last = delay;
        }
    }

    #[test]
    fn embeddings_follow_index_field() {
        let body = json!({"data": [
            {"index": 1, "embedding": [3.0, 4.0]},
            {"index": 0, "embedding": [1.0, 2.0]},
        ]});
        let transport = Arc::new(ScriptedTransport::new(vec![Ok(HttpResponse {
            status: 200,
            body: body.to_string(),
        })]));
        let vectors = embed_texts(
            transport.as_ref(),
            &fast_endpoint(),
            &["a".into(), "b".into()],
        )
        .unwrap();
        assert_eq!(vectors, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn embedding_count_mismatch_is_reported() {
        let body = json!({"data": [{"index": 0, "embedding": [1.0]}]});
        let transport = Arc::new(ScriptedTransport::new(vec![Ok(HttpResponse {
            status: 200,
            body: body.to_string(),
        })]));
        let err = embed_texts(
            transport.as_ref(),
            &fast_endpoint(),
            &["a".into(), "b".into()],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            BackendError::EmbeddingCount {
                expected: 2,
                got: 1
            }
        ));
    }

    #[test]
    fn command_hook_round_trip_and_failure() {
        let hook = CommandTrainerHook::new("sh", vec!["-c".into(), "cat >/dev/null; echo new-id".into()]);
        let passthrough = json!({"lora_rank": 8});
        let request = TrainRequest {
            preference_file: std::path::Path::new("prefs.jsonl"),
            base_model_id: "base",
            role: Role::Rewriter,
            round: 2,
            passthrough: &passthrough,
        };
        assert_eq!(hook.train(&request).unwrap(), "new-id");

        let failing = CommandTrainerHook::new("sh", vec!["-c".into(), "echo oops >&2; exit 3".into()]);
        let err = failing.train(&request).unwrap_err();
        match err {
            BackendError::Trainer(message) => assert!(message.contains("oops"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
