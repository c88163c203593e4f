use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, GatewayError, ModelRequest, ModelResponse, RequestKey};

/// Artificial per-request latency, used to reproduce stage timings offline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptDelays {
    /// Applied to every caption request.
    pub caption_ms: u64,
    pub situation_ms: u64,
    /// Applied once per debate round, on the revision request.
    pub debate_round_ms: u64,
    pub decision_ms: u64,
}

impl ScriptDelays {
    fn for_key(&self, key: &RequestKey) -> u64 {
        match key {
            RequestKey::Caption { .. } => self.caption_ms,
            RequestKey::Situation => self.situation_ms,
            RequestKey::DebateRevision { .. } => self.debate_round_ms,
            RequestKey::Decision => self.decision_ms,
            RequestKey::DebateChallenge { .. } | RequestKey::DebateReply { .. } => 0,
        }
    }
}

/// What the scripted backend saw, kept for assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub script_key: String,
    pub key: RequestKey,
    pub batch: Option<u64>,
    pub text: String,
    pub image_count: usize,
}

/// Deterministic backend answering from a key→text map.
///
/// Keys are frame sequence numbers (`"3"`), `"situation"`, `"debate:<n>"`,
/// `"debate:<n>:challenge"`, `"debate:<n>:reply"`, and `"decision"`, each
/// optionally suffixed with `":repair"` for the format-reminder retry. A key
/// may also carry `@<batch>` to override the answer for one analysis cycle;
/// the bare key is the fallback.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    entries: BTreeMap<String, String>,
    delays: ScriptDelays,
    log: Mutex<Vec<RecordedRequest>>,
}

impl ScriptedBackend {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self {
            id: "scripted".into(),
            entries,
            delays: ScriptDelays::default(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(
        pairs: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        Self::new(pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::InvalidConfig(format!("script {}: {e}", path.display()))
        })?;
        let entries: BTreeMap<String, String> = serde_json::from_str(&text).map_err(|e| {
            GatewayError::InvalidConfig(format!("script {}: {e}", path.display()))
        })?;
        Ok(Self::new(entries).with_id(format!("scripted:{}", path.display())))
    }

    pub fn with_delays(mut self, delays: ScriptDelays) -> Self {
        self.delays = delays;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn lookup(&self, script_key: &str, batch: Option<u64>) -> Option<&String> {
        batch
            .and_then(|b| self.entries.get(&format!("{script_key}@{b}")))
            .or_else(|| self.entries.get(script_key))
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().expect("request log poisoned").clone()
    }

    pub fn clear_requests(&self) {
        self.log.lock().expect("request log poisoned").clear();
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let started = Instant::now();
        let script_key = request.script_key();
        self.log
            .lock()
            .expect("request log poisoned")
            .push(RecordedRequest {
                script_key: script_key.clone(),
                key: request.key,
                batch: request.batch,
                text: request.text(),
                image_count: request.image_count(),
            });
        let delay = self.delays.for_key(&request.key);
        if delay > 0 {
            std::thread::sleep(Duration::from_millis(delay));
        }
        let text = self
            .lookup(&script_key, request.batch)
            .ok_or(GatewayError::ScriptMiss { key: script_key })?;
        Ok(ModelResponse {
            text: text.clone(),
            latency_ms: started.elapsed().as_millis() as u64,
            backend_id: self.id.clone(),
            attempt_count: 1,
        })
    }
}
