//! JSON-over-HTTP client for the inference sidecar (`/v1/...`).

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use spanproj::backend::{Beam, Capabilities, GenerateRequest, Generator, ScoreRequest, ScorerBackend};
use spanproj::BackendError;

/// `GET /v1/health` response.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// Subset of `generate`, `score`, `embed`.
    pub capabilities: Vec<String>,
    /// Embedding dimension, when an embedder is loaded.
    #[serde(default)]
    pub dims: Option<usize>,
    /// Model identifier per role.
    #[serde(default)]
    pub model_ids: BTreeMap<String, String>,
}

impl Health {
    pub fn has(&self, capability: &str) -> bool {
        self.capabilities.iter().any(|c| c == capability)
    }
}

#[derive(Deserialize)]
struct ScoreResponse {
    token_logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
    lang: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

pub struct HttpBackend {
    base: String,
    agent: Agent,
    retry: RetryPolicy,
    health: OnceLock<Health>,
}

impl HttpBackend {
    pub fn new(endpoint: &str, timeout: Duration, retry: RetryPolicy) -> Self {
        let config = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpBackend {
            base: endpoint.trim_end_matches('/').to_string(),
            agent: Agent::new_with_config(config),
            retry,
            health: OnceLock::new(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}/v1/{path}", self.base)
    }

    fn once<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<T, BackendError> {
        let url = self.url(path);
        let sent = match body {
            Some(b) => self.agent.post(&url).send_json(b),
            None => self.agent.get(&url).call(),
        };
        let mut response = sent.map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
        let status = response.status().as_u16();
        if status >= 400 {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            let msg = format!("{url}: HTTP {status}: {}", detail.trim());
            return Err(if status >= 500 || status == 429 {
                BackendError::Transport(msg)
            } else {
                BackendError::Rejected(msg)
            });
        }
        response
            .body_mut()
            .read_json::<T>()
            .map_err(|e| BackendError::Rejected(format!("{url}: malformed response: {e}")))
    }

    /// Repeats retryable failures with exponential backoff.
    fn call<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<T, BackendError> {
        let mut wait = self.retry.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.once(path, body) {
                Err(e) if e.is_retryable() && attempt < self.retry.attempts => {
                    thread::sleep(wait);
                    wait *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    pub fn health(&self) -> Result<&Health, BackendError> {
        if let Some(h) = self.health.get() {
            return Ok(h);
        }
        let h: Health = self.call::<(), _>("health", None)?;
        Ok(self.health.get_or_init(|| h))
    }
}

impl Generator for HttpBackend {
    fn generate(&self, request: &GenerateRequest) -> Result<Vec<Beam>, BackendError> {
        self.call("generate", Some(request))
    }

    fn identity(&self) -> String {
        model_identity(self, "generator")
    }
}

fn model_identity(backend: &HttpBackend, role: &str) -> String {
    match backend.health.get().and_then(|h| h.model_ids.get(role)) {
        Some(id) => format!("http({})/{id}", backend.base),
        None => format!("http({})", backend.base),
    }
}

impl ScorerBackend for HttpBackend {
    fn capabilities(&self) -> Capabilities {
        match self.health() {
            Ok(h) => Capabilities {
                conditional_logprobs: h.has("score"),
                embeddings: h.has("embed"),
            },
            Err(_) => Capabilities::default(),
        }
    }

    fn token_logprobs(&self, request: &ScoreRequest) -> Result<Vec<f64>, BackendError> {
        let r: ScoreResponse = self.call("score", Some(request))?;
        Ok(r.token_logprobs)
    }

    fn token_logprobs_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<Vec<f64>>, BackendError> {
        match requests {
            [] => Ok(Vec::new()),
            [one] => Ok(vec![self.token_logprobs(one)?]),
            many => {
                let r: Vec<ScoreResponse> = self.call("score", Some(&many))?;
                if r.len() != many.len() {
                    return Err(BackendError::Rejected(format!(
                        "batched score returned {} results for {} requests",
                        r.len(),
                        many.len()
                    )));
                }
                Ok(r.into_iter().map(|x| x.token_logprobs).collect())
            }
        }
    }

    fn embed(&self, text: &str, lang: &str) -> Result<Vec<f64>, BackendError> {
        let r: EmbedResponse = self.call("embed", Some(&EmbedRequest { text, lang }))?;
        Ok(r.vector)
    }

    fn identity(&self) -> String {
        model_identity(self, "scorer")
    }
}
