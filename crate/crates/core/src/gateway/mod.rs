//! Access to caption and analysis model backends.
//!
//! [`RemoteBackend`] speaks the chat-completions wire shape over HTTP with
//! retries, timeouts, and request pacing. [`ScriptedBackend`] answers from a
//! fixed key→text map so the whole pipeline can run offline and
//! deterministically.

mod prompts;
mod remote;
mod scripted;

use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompts::{render_template, PromptPack};
pub use remote::RemoteBackend;
pub use scripted::{RecordedRequest, ScriptDelays, ScriptedBackend};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("backend timed out after {attempts} attempt(s)")]
    BackendTimeout { attempts: u32 },
    #[error("backend rejected request with HTTP {status}: {body}")]
    BackendRejected { status: u16, body: String },
    #[error("backend still failing after {attempts} attempt(s): {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("scripted backend has no entry for key `{key}`")]
    ScriptMiss { key: String },
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("malformed backend response: {0}")]
    BadResponse(String),
}

/// What a request is for. Doubles as the lookup key of the scripted backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "stage")]
pub enum RequestKey {
    Caption { frame_seq: u64 },
    Situation,
    DebateChallenge { round: u32 },
    DebateReply { round: u32 },
    DebateRevision { round: u32 },
    Decision,
}

impl fmt::Display for RequestKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestKey::Caption { frame_seq } => write!(f, "{frame_seq}"),
            RequestKey::Situation => f.write_str("situation"),
            RequestKey::DebateChallenge { round } => write!(f, "debate:{round}:challenge"),
            RequestKey::DebateReply { round } => write!(f, "debate:{round}:reply"),
            RequestKey::DebateRevision { round } => write!(f, "debate:{round}"),
            RequestKey::Decision => f.write_str("decision"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    Image { media_type: String, data_base64: String },
}

impl ContentPart {
    pub fn text(text: impl Into<String>) -> Self {
        ContentPart::Text { text: text.into() }
    }

    pub fn png(bytes: &[u8]) -> Self {
        ContentPart::Image {
            media_type: "image/png".into(),
            data_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub request_id: String,
    pub key: RequestKey,
    /// Analysis cycle the request belongs to, for per-cycle script overrides.
    pub batch: Option<u64>,
    /// Set on the single format-reminder retry of a structured request.
    pub repair: bool,
    pub role_prompt: String,
    pub content: Vec<ContentPart>,
    pub max_response_chars: usize,
}

impl ModelRequest {
    pub fn new(key: RequestKey, role_prompt: impl Into<String>, content: Vec<ContentPart>) -> Self {
        assert!(!content.is_empty(), "a model request needs at least one content part");
        Self {
            request_id: String::new(),
            key,
            batch: None,
            repair: false,
            role_prompt: role_prompt.into(),
            content,
            max_response_chars: 4000,
        }
    }

    pub fn in_batch(mut self, batch: u64) -> Self {
        self.batch = Some(batch);
        if self.request_id.is_empty() {
            self.request_id = format!("b{batch}-{}", self.key);
        }
        self
    }

    /// Key used for scripted lookups, e.g. `debate:2:repair`.
    pub fn script_key(&self) -> String {
        if self.repair {
            format!("{}:repair", self.key)
        } else {
            self.key.to_string()
        }
    }

    pub fn text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.content
            .iter()
            .filter(|p| matches!(p, ContentPart::Image { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub latency_ms: u64,
    pub backend_id: String,
    pub attempt_count: u32,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError>;
}

pub type SharedBackend = Arc<dyn Backend>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteHttp,
    Scripted,
}

/// One `[backend.*]` config section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env_var: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub min_interval_ms: u64,
    #[serde(default)]
    pub script_path: Option<PathBuf>,
    #[serde(default)]
    pub delays: ScriptDelays,
}

fn default_model() -> String {
    "gpt-4o-mini".into()
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_base_ms() -> u64 {
    500
}

impl BackendConfig {
    pub fn remote(endpoint_url: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::RemoteHttp,
            endpoint_url: Some(endpoint_url.into()),
            model: default_model(),
            api_key_env_var: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            min_interval_ms: 0,
            script_path: None,
            delays: ScriptDelays::default(),
        }
    }

    pub fn scripted(script_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint_url: None,
            script_path: Some(script_path.into()),
            ..Self::remote("")
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.kind {
            BackendKind::RemoteHttp
                if self.endpoint_url.as_deref().unwrap_or("").is_empty() =>
            {
                Err(GatewayError::InvalidConfig(
                    "remote_http backend requires endpoint_url".into(),
                ))
            }
            BackendKind::Scripted if self.script_path.is_none() => Err(
                GatewayError::InvalidConfig("scripted backend requires script_path".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base: Duration::from_millis(self.backoff_base_ms),
            factor: 2,
        }
    }
}

/// Builds the backend described by `config`.
pub fn open_backend(config: &BackendConfig) -> Result<SharedBackend, GatewayError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::RemoteHttp => Arc::new(RemoteBackend::new(config)?),
        BackendKind::Scripted => {
            let path = config.script_path.as_ref().expect("validated");
            Arc::new(ScriptedBackend::from_file(path)?.with_delays(config.delays))
        }
    })
}

/// Exponential backoff: attempt `n` (0-based retry index) waits `base * factor^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub factor: u32,
}

impl RetryPolicy {
    pub fn delay(&self, retry_index: u32) -> Duration {
        self.base * self.factor.saturating_pow(retry_index)
    }

    pub fn delays(&self) -> impl Iterator<Item = Duration> + '_ {
        (0..self.max_retries).map(|i| self.delay(i))
    }
}

/// Enforces a minimum spacing between consecutive dispatches. Callers block
/// while holding the internal lock, so dispatches are serialized.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        Self {
            min_interval,
            last: Mutex::new(None),
        }
    }

    /// Blocks until a dispatch is allowed and returns its timestamp.
    pub fn acquire(&self) -> Instant {
        let mut last = self.last.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let ready = prev + self.min_interval;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        let now = Instant::now();
        *last = Some(now);
        now
    }
}
