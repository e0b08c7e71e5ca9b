//! Pluggable text-completion backends with a content-addressed response
//! cache. The scripted and seeded mocks make every pipeline mechanism
//! testable without a live model; the http backend speaks a
//! chat-completion interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub sample_count: usize,
    pub max_output: usize,
    pub model_id: String,
    /// Deterministic sampling seed for mocks; also keys the cache, so two
    /// otherwise-identical requests with different seeds are distinct calls.
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count < 1 {
            return Err(Error::Config("sample_count must be >= 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature must be in [0, 2], got {}",
                self.temperature
            )));
        }
        if self.max_output < 1 {
            return Err(Error::Config("max_output must be >= 1".into()));
        }
        Ok(())
    }

    /// Content digest over every keyed field, via the canonical serialized
    /// form. The cache key.
    pub fn digest(&self) -> String {
        let canon = serde_json::to_vec(self).expect("request serialization is infallible");
        let mut hasher = Sha256::new();
        hasher.update(&canon);
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompletionBatch {
    pub samples: Vec<String>,
    pub request_digest: String,
    pub backend_id: String,
}

/// One file per digest under a run-independent root; writes go through a
/// temp file and rename so concurrent writers of the same digest are safe.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|source| Error::Io {
            path: root.display().to_string(),
            source,
        })?;
        Ok(ResponseCache {
            root: root.to_path_buf(),
        })
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.root.join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<CompletionBatch>> {
        let path = self.entry_path(digest);
        match fs::read(&path) {
            Ok(bytes) => {
                let batch = serde_json::from_slice(&bytes)
                    .map_err(|e| Error::Protocol(format!("corrupt cache entry {digest}: {e}")))?;
                Ok(Some(batch))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(Error::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }

    pub fn put(&self, batch: &CompletionBatch) -> Result<()> {
        let path = self.entry_path(&batch.request_digest);
        let tmp = self.root.join(format!(
            ".{}.{}.tmp",
            batch.request_digest,
            std::process::id()
        ));
        let bytes = serde_json::to_vec(batch).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(&tmp, bytes).map_err(|source| Error::Io {
            path: tmp.display().to_string(),
            source,
        })?;
        fs::rename(&tmp, &path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// A completion backend. `complete` must return exactly
/// `request.sample_count` samples.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Regex matched against the prompt.
    pub pattern: String,
    /// Responses consumed in order per rule, cycling.
    pub responses: Vec<String>,
}

/// Replays scripted responses. Rules are tried in order; the first whose
/// pattern matches the prompt supplies the response. Each rule keeps a
/// cursor that advances once per sample drawn, cycling over its list.
pub struct ScriptedBackend {
    rules: Vec<(Regex, Vec<String>)>,
    cursors: Mutex<Vec<usize>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self> {
        let mut compiled = Vec::with_capacity(rules.len());
        for rule in rules {
            if rule.responses.is_empty() {
                return Err(Error::Config(format!(
                    "script rule `{}` has no responses",
                    rule.pattern
                )));
            }
            let re = Regex::new(&rule.pattern).map_err(|e| {
                Error::Config(format!("bad script pattern `{}`: {e}", rule.pattern))
            })?;
            compiled.push((re, rule.responses));
        }
        let cursors = Mutex::new(vec![0; compiled.len()]);
        Ok(ScriptedBackend {
            rules: compiled,
            cursors,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let rules: Vec<ScriptRule> =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(e.to_string()))?;
        Self::new(rules)
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted_mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>> {
        let rule_idx = self
            .rules
            .iter()
            .position(|(re, _)| re.is_match(&request.prompt))
            .ok_or_else(|| Error::Backend {
                attempts: 1,
                message: format!(
                    "no script rule matches prompt starting {:?}",
                    request.prompt.chars().take(60).collect::<String>()
                ),
            })?;
        let responses = &self.rules[rule_idx].1;
        let mut cursors = self.cursors.lock().unwrap();
        let mut out = Vec::with_capacity(request.sample_count);
        for _ in 0..request.sample_count {
            out.push(responses[cursors[rule_idx] % responses.len()].clone());
            cursors[rule_idx] += 1;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedResponse {
    pub text: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedRule {
    /// Optional prompt regex; a rule with no pattern matches everything.
    #[serde(default)]
    pub pattern: Option<String>,
    pub responses: Vec<WeightedResponse>,
}

/// Draws weighted responses as a pure function of
/// (seed, request digest, draw index). Rules are tried in order.
pub struct SeededBackend {
    rules: Vec<(Option<Regex>, Vec<WeightedResponse>)>,
    default_seed: u64,
}

impl SeededBackend {
    pub fn new(rules: Vec<WeightedRule>, default_seed: u64) -> Result<Self> {
        let mut compiled = Vec::with_capacity(rules.len());
        for rule in rules {
            if rule.responses.is_empty() {
                return Err(Error::Config("weighted rule has no responses".into()));
            }
            if rule.responses.iter().any(|r| r.weight < 0.0)
                || rule.responses.iter().map(|r| r.weight).sum::<f64>() <= 0.0
            {
                return Err(Error::Config(
                    "weights must be non-negative with positive sum".into(),
                ));
            }
            let re = match &rule.pattern {
                Some(p) => Some(
                    Regex::new(p)
                        .map_err(|e| Error::Config(format!("bad weighted pattern `{p}`: {e}")))?,
                ),
                None => None,
            };
            compiled.push((re, rule.responses));
        }
        Ok(SeededBackend {
            rules: compiled,
            default_seed,
        })
    }

    pub fn from_file(path: &Path, default_seed: u64) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let rules: Vec<WeightedRule> =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(e.to_string()))?;
        Self::new(rules, default_seed)
    }

    /// Uniform draw in [0, 1) from a hash of (seed, digest, index).
    fn unit_draw(seed: u64, digest: &str, index: usize) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(digest.as_bytes());
        hasher.update((index as u64).to_le_bytes());
        let out = hasher.finalize();
        let x = u64::from_le_bytes(out[..8].try_into().unwrap());
        (x >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl Backend for SeededBackend {
    fn id(&self) -> &str {
        "seeded_mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>> {
        let responses = self
            .rules
            .iter()
            .find(|(re, _)| re.as_ref().map_or(true, |re| re.is_match(&request.prompt)))
            .map(|(_, rs)| rs)
            .ok_or_else(|| Error::Backend {
                attempts: 1,
                message: "no weighted rule matches prompt".into(),
            })?;
        let seed = request.seed.unwrap_or(self.default_seed);
        let digest = request.digest();
        let total: f64 = responses.iter().map(|r| r.weight).sum();
        let mut out = Vec::with_capacity(request.sample_count);
        for i in 0..request.sample_count {
            let mut x = Self::unit_draw(seed, &digest, i) * total;
            let mut chosen = &responses[responses.len() - 1].text;
            for r in responses {
                if x < r.weight {
                    chosen = &r.text;
                    break;
                }
                x -= r.weight;
            }
            out.push(chosen.clone());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL of a chat-completion endpoint.
    pub endpoint: String,
    /// Name of the environment variable holding the API key. The key
    /// itself is never logged or serialized.
    pub credential_env: String,
}

/// Live backend speaking the chat-completion wire format. Transport errors
/// retry up to 3 attempts with 1 s / 2 s / 4 s backoff.
pub struct HttpBackend {
    endpoint: String,
    credential: String,
    client: reqwest::blocking::Client,
}

const HTTP_ATTEMPTS: u32 = 3;

impl HttpBackend {
    pub fn new(config: &HttpConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::Config(
                "http backend requires an endpoint URL".into(),
            ));
        }
        if config.credential_env.is_empty() {
            return Err(Error::Config(
                "http backend requires a credential env var name".into(),
            ));
        }
        let credential = std::env::var(&config.credential_env).map_err(|_| {
            Error::Config(format!(
                "credential environment variable `{}` is not set",
                config.credential_env
            ))
        })?;
        Ok(HttpBackend {
            endpoint: config.endpoint.trim_end_matches('/').to_string(),
            credential,
            client: reqwest::blocking::Client::new(),
        })
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    n: usize,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        "http_provider"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>> {
        let body = ChatRequest {
            model: &request.model_id,
            messages: vec![ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            n: request.sample_count,
            max_tokens: request.max_output,
        };
        let url = format!("{}/chat/completions", self.endpoint);
        let mut last_err = String::new();
        for attempt in 0..HTTP_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(Duration::from_secs(1 << (attempt - 1)));
            }
            match self
                .client
                .post(&url)
                .bearer_auth(&self.credential)
                .json(&body)
                .send()
                .and_then(|r| r.error_for_status())
            {
                Ok(resp) => {
                    let reply: ChatReply = resp
                        .json()
                        .map_err(|e| Error::Protocol(format!("malformed provider reply: {e}")))?;
                    if reply.choices.len() != request.sample_count {
                        return Err(Error::Protocol(format!(
                            "provider returned {} choices, expected {}",
                            reply.choices.len(),
                            request.sample_count
                        )));
                    }
                    return Ok(reply
                        .choices
                        .into_iter()
                        .map(|c| c.message.content)
                        .collect());
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Backend {
            attempts: HTTP_ATTEMPTS,
            message: last_err,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    HttpProvider(HttpConfig),
    ScriptedMock { script_path: PathBuf },
    SeededMock { table_path: PathBuf, seed: u64 },
}

pub fn make_backend(config: &BackendConfig) -> Result<Box<dyn Backend>> {
    match config {
        BackendConfig::HttpProvider(http) => Ok(Box::new(HttpBackend::new(http)?)),
        BackendConfig::ScriptedMock { script_path } => {
            Ok(Box::new(ScriptedBackend::from_file(script_path)?))
        }
        BackendConfig::SeededMock { table_path, seed } => {
            Ok(Box::new(SeededBackend::from_file(table_path, *seed)?))
        }
    }
}

/// Backend plus cache. Consults the cache first; on a miss calls the
/// backend, stores the batch, and counts the call. `backend_calls` counts
/// actual backend invocations, never cache hits.
pub struct LlmClient {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    calls: AtomicU64,
}

impl LlmClient {
    pub fn new(backend: Box<dyn Backend>, cache: Option<ResponseCache>) -> Self {
        LlmClient {
            backend,
            cache,
            calls: AtomicU64::new(0),
        }
    }

    pub fn backend_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionBatch> {
        request.validate()?;
        let digest = request.digest();
        if let Some(cache) = &self.cache {
            if let Some(batch) = cache.get(&digest)? {
                return Ok(batch);
            }
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let samples = self.backend.complete(request)?;
        if samples.len() != request.sample_count {
            return Err(Error::Protocol(format!(
                "backend returned {} samples, expected {}",
                samples.len(),
                request.sample_count
            )));
        }
        let batch = CompletionBatch {
            samples,
            request_digest: digest,
            backend_id: self.backend.id().to_string(),
        };
        if let Some(cache) = &self.cache {
            cache.put(&batch)?;
        }
        Ok(batch)
    }
}
