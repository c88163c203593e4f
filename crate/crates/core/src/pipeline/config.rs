use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agents::AgentPolicy;
use crate::alerting::{ChannelConfig, ChannelKind, DispatchRetry, EscalationPolicy, SiteConfig};
use crate::gateway::BackendConfig;
use crate::ingest::{SourceConfig, SourceKind, DEFAULT_BATCH_SIZE};

use super::PipelineError;

/// Per-stage latency budgets. Overruns are logged and counted, never enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageBudgets {
    pub capture: u64,
    pub caption: u64,
    pub analysis: u64,
    pub debate_extra: u64,
}

impl Default for StageBudgets {
    fn default() -> Self {
        Self {
            capture: 1000,
            caption: 4000,
            analysis: 2000,
            debate_extra: 2000,
        }
    }
}

/// The `[pipeline]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    pub batch_size: usize,
    pub queue_capacity: usize,
    pub workers: usize,
    pub budgets_ms: StageBudgets,
    /// Prompt pack file; the bundled pack when unset.
    pub prompts: Option<PathBuf>,
    /// Extra time spent in the capture stage per batch, for latency tests.
    pub inject_capture_ms: u64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            queue_capacity: 3,
            workers: 1,
            budgets_ms: StageBudgets::default(),
            prompts: None,
            inject_capture_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSection {
    pub image: BackendConfig,
    /// Defaults to the image backend when omitted.
    #[serde(default)]
    pub situation: Option<BackendConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSection {
    pub root: PathBuf,
    #[serde(default)]
    pub evidence_quota_mb: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSection {
    pub bind: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DispatchSection {
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for DispatchSection {
    fn default() -> Self {
        let d = DispatchRetry::default();
        Self {
            max_retries: d.max_retries,
            backoff_base_ms: d.base.as_millis() as u64,
        }
    }
}

impl DispatchSection {
    pub fn retry(&self) -> DispatchRetry {
        DispatchRetry {
            max_retries: self.max_retries,
            base: Duration::from_millis(self.backoff_base_ms),
        }
    }
}

/// The daemon configuration file (TOML or JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: SourceConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    pub backend: BackendSection,
    #[serde(default)]
    pub policy: AgentPolicy,
    #[serde(default)]
    pub channels: BTreeMap<String, ChannelConfig>,
    /// One tier holding every enabled channel when omitted.
    #[serde(default)]
    pub escalation: Option<EscalationPolicy>,
    pub store: StoreSection,
    #[serde(default)]
    pub http: Option<HttpSection>,
    #[serde(default)]
    pub site: SiteConfig,
    #[serde(default)]
    pub dispatch: DispatchSection,
}

impl PipelineConfig {
    /// Minimal config: a source, one scripted or remote backend, a store.
    pub fn new(source: SourceConfig, backend: BackendConfig, store_root: impl Into<PathBuf>) -> Self {
        Self {
            source,
            pipeline: PipelineSection::default(),
            backend: BackendSection {
                image: backend,
                situation: None,
            },
            policy: AgentPolicy::default(),
            channels: BTreeMap::new(),
            escalation: None,
            store: StoreSection {
                root: store_root.into(),
                evidence_quota_mb: None,
            },
            http: None,
            site: SiteConfig {
                label: "unnamed site".into(),
                ..SiteConfig::default()
            },
            dispatch: DispatchSection::default(),
        }
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::FatalConfig(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text, path.extension().and_then(|e| e.to_str()) == Some("json"))
            .map_err(|e| PipelineError::FatalConfig(format!("{}: {e}", path.display())))?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, String> {
        let mut config: Self = if json {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        } else {
            toml::from_str(text).map_err(|e| e.to_string())?
        };
        for (name, channel) in config.channels.iter_mut() {
            if channel.name.is_empty() {
                channel.name = name.clone();
            }
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if self.source.kind != SourceKind::MjpegUrl && Path::new(&self.source.path_or_url).is_relative() {
            self.source.path_or_url = base.join(&self.source.path_or_url).display().to_string();
        }
        if let Some(p) = self.backend.image.script_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.backend.situation.as_mut().and_then(|b| b.script_path.as_mut()) {
            fix(p);
        }
        if let Some(p) = self.pipeline.prompts.as_mut() {
            fix(p);
        }
        fix(&mut self.store.root);
        for channel in self.channels.values_mut() {
            if channel.kind == ChannelKind::File && Path::new(&channel.destination).is_relative() {
                channel.destination = base.join(&channel.destination).display().to_string();
            }
        }
    }

    pub fn situation_backend(&self) -> &BackendConfig {
        self.backend.situation.as_ref().unwrap_or(&self.backend.image)
    }

    pub fn enabled_channels(&self) -> Vec<ChannelConfig> {
        self.channels.values().filter(|c| c.enabled).cloned().collect()
    }

    pub fn escalation_policy(&self) -> EscalationPolicy {
        self.escalation.clone().unwrap_or_else(|| {
            EscalationPolicy::single_tier(self.enabled_channels().into_iter().map(|c| c.name).collect())
        })
    }

    pub fn http_addr(&self) -> Result<Option<SocketAddr>, PipelineError> {
        self.http
            .as_ref()
            .map(|h| {
                h.bind
                    .parse()
                    .map_err(|e| PipelineError::FatalConfig(format!("http.bind `{}`: {e}", h.bind)))
            })
            .transpose()
    }

    /// Checks every section; the message names the offending one.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fatal = |section: &str, e: &dyn std::fmt::Display| {
            PipelineError::FatalConfig(format!("[{section}] {e}"))
        };
        self.source.validate().map_err(|e| fatal("source", &e))?;
        let p = &self.pipeline;
        if p.batch_size == 0 || p.queue_capacity == 0 || p.workers == 0 {
            return Err(fatal(
                "pipeline",
                &"batch_size, queue_capacity, and workers must be at least 1",
            ));
        }
        let b = p.budgets_ms;
        if [b.capture, b.caption, b.analysis, b.debate_extra].contains(&0) {
            return Err(fatal("pipeline", &"budgets_ms must be positive"));
        }
        self.backend
            .image
            .validate()
            .map_err(|e| fatal("backend.image", &e))?;
        self.situation_backend()
            .validate()
            .map_err(|e| fatal("backend.situation", &e))?;
        self.policy.validate().map_err(|e| fatal("policy", &e))?;
        for (name, channel) in &self.channels {
            channel
                .validate()
                .map_err(|e| fatal(&format!("channels.{name}"), &e))?;
        }
        if let Some(esc) = &self.escalation {
            esc.validate().map_err(|e| fatal("escalation", &e))?;
            for name in esc.tiers.iter().flatten() {
                if !self.channels.contains_key(name) {
                    return Err(fatal("escalation", &format!("unknown channel `{name}`")));
                }
            }
        }
        self.http_addr()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[source]
kind = "directory"
path_or_url = "frames"

[pipeline]
queue_capacity = 2

[backend.image]
kind = "scripted"
script_path = "script.json"

[policy]
alert_threshold = 0.85

[channels.ops]
kind = "file"
destination = "alerts.jsonl"

[escalation]
tiers = [["ops"]]
ack_timeout_s = 60

[store]
root = "store"

[http]
bind = "127.0.0.1:0"

[site]
label = "north gate"
"#;

    #[test]
    fn sample_parses_with_defaults_and_resolved_paths() {
        let mut c = PipelineConfig::parse(SAMPLE, false).unwrap();
        c.resolve_paths(Path::new("/etc/cw"));
        c.validate().unwrap();
        assert_eq!(c.pipeline.batch_size, 5);
        assert_eq!(c.pipeline.queue_capacity, 2);
        assert_eq!(c.pipeline.budgets_ms, StageBudgets::default());
        assert_eq!(c.policy.alert_threshold, 0.85);
        assert_eq!(c.channels["ops"].name, "ops");
        assert_eq!(c.channels["ops"].destination, "/etc/cw/alerts.jsonl");
        assert_eq!(c.store.root, PathBuf::from("/etc/cw/store"));
        assert_eq!(c.source.path_or_url, "/etc/cw/frames");
        assert_eq!(c.situation_backend().script_path, Some(PathBuf::from("/etc/cw/script.json")));
        assert_eq!(c.dispatch.retry(), DispatchRetry::default());
    }

    #[test]
    fn validation_names_the_section() {
        let mut c = PipelineConfig::parse(SAMPLE, false).unwrap();
        c.pipeline.queue_capacity = 0;
        assert!(c.validate().unwrap_err().to_string().contains("[pipeline]"));
        let mut c = PipelineConfig::parse(SAMPLE, false).unwrap();
        c.escalation.as_mut().unwrap().tiers = vec![vec!["pager".into()]];
        assert!(c.validate().unwrap_err().to_string().contains("unknown channel `pager`"));
    }
}
