//! Generation backends: a scripted fixture player and an HTTP client for
//! chat-completion style services.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptDocument;

/// Environment variable that overrides the configured API credential.
pub const API_KEY_ENV: &str = "RLP_API_KEY";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: PromptDocument,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
    pub finish_reason: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("provider returned {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("fixture exhausted after {served} completion(s)")]
    FixtureExhausted { served: usize },
    #[error("prompt digest mismatch at fixture entry {entry}: expected {expected}, got {actual}")]
    DigestMismatch { entry: usize, expected: String, actual: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { retryable, .. } => *retryable,
            BackendError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Backend settings worth recording alongside a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSnapshot {
    pub kind: BackendKind,
    pub params: GenerationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Http,
}

/// A source of completions.
pub trait Backend: Send {
    /// Produces one completion, reporting text chunks as they arrive.
    /// The chunks concatenate to [`Completion::text`].
    fn generate(
        &mut self,
        req: &GenerationRequest,
        on_chunk: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError>;

    fn params(&self) -> &GenerationParams;

    fn snapshot(&self) -> BackendSnapshot;

    /// Maximum prompt size in estimated tokens, when known.
    fn context_limit(&self) -> Option<usize> {
        None
    }
}

// ---------------------------------------------------------------------------
// Fixtures

/// One scripted completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub text: String,
    /// Hex SHA-256 of the prompt this entry answers; checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_digest: Option<String>,
}

/// Ordered completions, stored as TOML:
///
/// ```toml
/// [[completion]]
/// text = "<FEELING>glee</FEELING> ..."
/// prompt_digest = "3f1a..."   # optional
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    #[serde(default, rename = "completion")]
    pub completions: Vec<FixtureEntry>,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read fixture {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse fixture {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Fixture {
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            completions: texts
                .into_iter()
                .map(|t| FixtureEntry { text: t.into(), prompt_digest: None })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fixture serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_toml())
    }

    /// Drops every digest, so replays skip prompt verification.
    pub fn without_digests(mut self) -> Self {
        for e in &mut self.completions {
            e.prompt_digest = None;
        }
        self
    }
}

pub fn load_fixture(path: impl AsRef<Path>) -> Result<Fixture, FixtureError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => FixtureError::NotFound(path.to_path_buf()),
        _ => FixtureError::Io { path: path.to_path_buf(), source },
    })?;
    toml::from_str(&text)
        .map_err(|e| FixtureError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Plays fixture entries in order. The cursor belongs to this instance, so
/// each session gets its own.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    fixture: Fixture,
    cursor: usize,
    chunk_chars: usize,
    params: GenerationParams,
    source: Option<PathBuf>,
    context_limit: Option<usize>,
}

impl ScriptedBackend {
    pub fn new(fixture: Fixture) -> Self {
        Self {
            fixture,
            cursor: 0,
            chunk_chars: 16,
            params: GenerationParams { model: "scripted".into(), ..Default::default() },
            source: None,
            context_limit: None,
        }
    }

    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Fixture::from_texts(texts))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let mut backend = Self::new(load_fixture(path.as_ref())?);
        backend.source = Some(path.as_ref().to_path_buf());
        Ok(backend)
    }

    /// Size of the pieces each completion is streamed in (at least 1).
    pub fn with_chunk_chars(mut self, chars: usize) -> Self {
        self.chunk_chars = chars.max(1);
        self
    }

    pub fn with_context_limit(mut self, limit: Option<usize>) -> Self {
        self.context_limit = limit;
        self
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn fixture(&self) -> &Fixture {
        &self.fixture
    }
}

impl Backend for ScriptedBackend {
    fn generate(
        &mut self,
        req: &GenerationRequest,
        on_chunk: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError> {
        let entry = self
            .fixture
            .completions
            .get(self.cursor)
            .ok_or(BackendError::FixtureExhausted { served: self.cursor })?;
        if let Some(expected) = &entry.prompt_digest {
            let actual = req.prompt.digest();
            if &actual != expected {
                return Err(BackendError::DigestMismatch {
                    entry: self.cursor,
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        let text = entry.text.clone();
        self.cursor += 1;
        let chars: Vec<char> = text.chars().collect();
        for piece in chars.chunks(self.chunk_chars) {
            on_chunk(&piece.iter().collect::<String>());
        }
        Ok(Completion { text, usage: None, finish_reason: Some("stop".into()) })
    }

    fn params(&self) -> &GenerationParams {
        &self.params
    }

    fn snapshot(&self) -> BackendSnapshot {
        BackendSnapshot {
            kind: BackendKind::Scripted,
            params: self.params.clone(),
            base_url: None,
            fixture: self.source.clone(),
        }
    }

    fn context_limit(&self) -> Option<usize> {
        self.context_limit
    }
}

// ---------------------------------------------------------------------------
// HTTP

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL up to the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_limit: Option<usize>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

/// Streams completions from a `POST {base_url}/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: HttpConfig,
    params: GenerationParams,
    client: reqwest::blocking::Client,
    backoff: Duration,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<crate::prompt::ChatMessage>,
    stream: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize, Default)]
struct WireChunk {
    #[serde(default)]
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
    #[serde(default)]
    error: Option<serde_json::Value>,
}

#[derive(Deserialize, Default)]
struct WireChoice {
    #[serde(default)]
    delta: Option<WireContent>,
    #[serde(default)]
    message: Option<WireContent>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireContent {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.base_url.trim().is_empty() {
            return Err(BackendError::Config("http backend needs a base_url".into()));
        }
        if config.model.trim().is_empty() {
            return Err(BackendError::Config("http backend needs a model".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let params = GenerationParams {
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        };
        Ok(Self { config, params, client, backoff: Duration::from_millis(250) })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(
        &self,
        req: &GenerationRequest,
        on_chunk: &mut dyn FnMut(&str),
        emitted: &mut bool,
    ) -> Result<Completion, BackendError> {
        let body = WireRequest {
            model: &req.params.model,
            messages: req.prompt.to_messages(),
            stream: true,
            temperature: req.params.temperature,
            max_tokens: req.params.max_tokens,
        };
        let mut builder = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| BackendError::Transport {
            message: e.to_string(),
            retryable: e.is_connect() || e.is_timeout() || e.is_request(),
        })?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(BackendError::Provider { status: status.as_u16(), body });
        }
        let is_json = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("application/json"));
        if is_json {
            let chunk: WireChunk = response.json().map_err(|e| BackendError::Transport {
                message: e.to_string(),
                retryable: false,
            })?;
            return completion_from_json(chunk, status.as_u16(), on_chunk, emitted);
        }

        let mut out = Completion::default();
        let reader = BufReader::new(response);
        for line in reader.lines() {
            let line = line.map_err(|e| BackendError::Transport {
                message: e.to_string(),
                retryable: true,
            })?;
            let Some(data) = line.strip_prefix("data:") else { continue };
            let data = data.trim();
            if data == "[DONE]" {
                break;
            }
            if data.is_empty() {
                continue;
            }
            let chunk: WireChunk = serde_json::from_str(data).map_err(|e| {
                BackendError::Transport { message: format!("bad stream chunk: {e}"), retryable: false }
            })?;
            if let Some(err) = chunk.error {
                return Err(BackendError::Provider { status: status.as_u16(), body: err.to_string() });
            }
            if let Some(usage) = chunk.usage {
                out.usage = Some(usage);
            }
            for choice in chunk.choices {
                if let Some(text) = choice.delta.and_then(|d| d.content) {
                    if !text.is_empty() {
                        *emitted = true;
                        on_chunk(&text);
                        out.text.push_str(&text);
                    }
                }
                if choice.finish_reason.is_some() {
                    out.finish_reason = choice.finish_reason;
                }
            }
        }
        Ok(out)
    }
}

fn completion_from_json(
    chunk: WireChunk,
    status: u16,
    on_chunk: &mut dyn FnMut(&str),
    emitted: &mut bool,
) -> Result<Completion, BackendError> {
    if let Some(err) = chunk.error {
        return Err(BackendError::Provider { status, body: err.to_string() });
    }
    let mut out = Completion { usage: chunk.usage, ..Default::default() };
    if let Some(choice) = chunk.choices.into_iter().next() {
        out.text = choice.message.and_then(|m| m.content).unwrap_or_default();
        out.finish_reason = choice.finish_reason;
    }
    if !out.text.is_empty() {
        *emitted = true;
        on_chunk(&out.text);
    }
    Ok(out)
}

impl Backend for HttpBackend {
    fn generate(
        &mut self,
        req: &GenerationRequest,
        on_chunk: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError> {
        let mut emitted = false;
        match self.attempt(req, on_chunk, &mut emitted) {
            // one retry, and only if nothing reached the caller yet
            Err(e) if e.is_retryable() && !emitted => {
                log::warn!("generation failed ({e}); retrying once");
                std::thread::sleep(self.backoff);
                self.attempt(req, on_chunk, &mut emitted)
            }
            other => other,
        }
    }

    fn params(&self) -> &GenerationParams {
        &self.params
    }

    fn snapshot(&self) -> BackendSnapshot {
        BackendSnapshot {
            kind: BackendKind::Http,
            params: self.params.clone(),
            base_url: Some(self.config.base_url.clone()),
            fixture: None,
        }
    }

    fn context_limit(&self) -> Option<usize> {
        self.config.context_limit
    }
}

// ---------------------------------------------------------------------------
// Configuration

/// The `[backend]` table of a config file.
///
/// ```toml
/// [backend]
/// kind = "http"
/// base_url = "https://api.openai.com/v1"
/// model = "gpt-4"
/// temperature = 0.7
/// max_tokens = 1024
/// # api_key = "..."   # RLP_API_KEY overrides this
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: Option<BackendKind>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub api_key: Option<String>,
    pub context_limit: Option<usize>,
    pub fixture: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
}

/// Either backend, chosen at runtime.
#[derive(Debug, Clone)]
pub enum BackendHandle {
    Scripted(ScriptedBackend),
    Http(HttpBackend),
}

impl BackendConfig {
    /// Builds a handle, reading the credential override from the environment.
    pub fn build(&self) -> Result<BackendHandle, BackendError> {
        self.build_with_key(std::env::var(API_KEY_ENV).ok())
    }

    pub fn build_with_key(&self, env_key: Option<String>) -> Result<BackendHandle, BackendError> {
        match self.kind.unwrap_or(BackendKind::Http) {
            BackendKind::Scripted => {
                let path = self
                    .fixture
                    .as_ref()
                    .ok_or_else(|| BackendError::Config("scripted backend needs a fixture".into()))?;
                let backend = ScriptedBackend::open(path)
                    .map_err(|e| BackendError::Config(e.to_string()))?
                    .with_context_limit(self.context_limit);
                Ok(BackendHandle::Scripted(backend))
            }
            BackendKind::Http => {
                let config = HttpConfig {
                    base_url: self.base_url.clone().unwrap_or_default(),
                    model: self.model.clone().unwrap_or_default(),
                    api_key: env_key.or_else(|| self.api_key.clone()),
                    temperature: self.temperature,
                    max_tokens: self.max_tokens,
                    context_limit: self.context_limit,
                    timeout_secs: self.timeout_secs.unwrap_or_else(default_timeout_secs),
                };
                Ok(BackendHandle::Http(HttpBackend::new(config)?))
            }
        }
    }
}

impl Backend for BackendHandle {
    fn generate(
        &mut self,
        req: &GenerationRequest,
        on_chunk: &mut dyn FnMut(&str),
    ) -> Result<Completion, BackendError> {
        match self {
            BackendHandle::Scripted(b) => b.generate(req, on_chunk),
            BackendHandle::Http(b) => b.generate(req, on_chunk),
        }
    }

    fn params(&self) -> &GenerationParams {
        match self {
            BackendHandle::Scripted(b) => b.params(),
            BackendHandle::Http(b) => b.params(),
        }
    }

    fn snapshot(&self) -> BackendSnapshot {
        match self {
            BackendHandle::Scripted(b) => b.snapshot(),
            BackendHandle::Http(b) => b.snapshot(),
        }
    }

    fn context_limit(&self) -> Option<usize> {
        match self {
            BackendHandle::Scripted(b) => b.context_limit(),
            BackendHandle::Http(b) => b.context_limit(),
        }
    }
}
