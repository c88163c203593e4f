//! The three-agent analysis workflow.
//!
//! The Image Analyzer captions each frame of a batch, the Situation Analyzer
//! reads the captions in capture order and produces a [`ThreatAssessment`],
//! ambiguous assessments go through a bounded challenge/reply debate between
//! the two, and the Decision step turns the final assessment into an
//! alert/no-alert [`Decision`] with a confidence and explanation.

mod assessment;
mod caption;
mod debate;
mod decision;
mod workflow;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::ingest::BatchId;

pub use assessment::{analyze_situation, parse_assessment, request_assessment, ParsedAssessment};
pub use caption::{analyze_images, extract_entities, frame_images};
pub use debate::{run_debate, should_debate};
pub use decision::{decide, decide_with_backend};
pub use workflow::{AnalysisStage, CycleAnalysis, CycleFailure, Workflow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentsError {
    #[error("captioning frame {frame_seq} failed: {source}")]
    Caption {
        frame_seq: u64,
        /// Captions of the frames that succeeded before the failure.
        partial: Vec<Caption>,
        source: GatewayError,
    },
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("malformed assessment after {attempts} attempt(s): {reason}")]
    MalformedAssessment { attempts: u32, reason: String },
    #[error("caption sequence is empty")]
    EmptySequence,
    #[error("invalid caption sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub frame_seq: u64,
    pub text: String,
    pub entities: Vec<String>,
    pub captured_at: DateTime<Utc>,
}

/// Captions of one batch in capture order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSequence {
    pub batch_id: BatchId,
    pub captions: Vec<Caption>,
}

impl CaptionSequence {
    pub fn new(batch_id: BatchId, captions: Vec<Caption>) -> Result<Self, AgentsError> {
        for pair in captions.windows(2) {
            if pair[1].captured_at < pair[0].captured_at {
                return Err(AgentsError::InvalidSequence(format!(
                    "frame {} precedes frame {}",
                    pair[1].frame_seq, pair[0].frame_seq
                )));
            }
        }
        if let Some(c) = captions.iter().find(|c| c.text.trim().is_empty()) {
            return Err(AgentsError::InvalidSequence(format!(
                "empty caption for frame {}",
                c.frame_seq
            )));
        }
        Ok(Self { batch_id, captions })
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    /// One line per caption, oldest first, as embedded in prompts.
    pub fn render(&self) -> String {
        self.captions
            .iter()
            .map(|c| {
                format!(
                    "[{}] frame {}: {}",
                    c.captured_at.format("%Y-%m-%dT%H:%M:%S%.3fZ"),
                    c.frame_seq,
                    c.text
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreatLabel {
    Normal,
    Suspicious,
    Abduction,
}

impl ThreatLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThreatLabel::Normal => "normal",
            ThreatLabel::Suspicious => "suspicious",
            ThreatLabel::Abduction => "abduction",
        }
    }
}

impl std::str::FromStr for ThreatLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(ThreatLabel::Normal),
            "suspicious" => Ok(ThreatLabel::Suspicious),
            "abduction" => Ok(ThreatLabel::Abduction),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAssessment")]
pub struct ThreatAssessment {
    pub label: ThreatLabel,
    pub confidence: f64,
    pub rationale: String,
    pub cues: Vec<String>,
}

#[derive(Deserialize)]
struct RawAssessment {
    label: ThreatLabel,
    confidence: f64,
    #[serde(default)]
    rationale: String,
    #[serde(default)]
    cues: Vec<String>,
}

impl TryFrom<RawAssessment> for ThreatAssessment {
    type Error = String;

    fn try_from(raw: RawAssessment) -> Result<Self, Self::Error> {
        ThreatAssessment::new(raw.label, raw.confidence, raw.rationale, raw.cues)
    }
}

impl ThreatAssessment {
    pub fn new(
        label: ThreatLabel,
        confidence: f64,
        rationale: impl Into<String>,
        cues: Vec<String>,
    ) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(format!("confidence {confidence} is outside [0, 1]"));
        }
        if label == ThreatLabel::Abduction && cues.iter().all(|c| c.trim().is_empty()) {
            return Err("an abduction label needs at least one cue".into());
        }
        Ok(Self {
            label,
            confidence,
            rationale: rationale.into(),
            cues,
        })
    }

    /// Short form used in prompts and summaries, e.g. `suspicious (0.55)`.
    pub fn brief(&self) -> String {
        format!("{} ({:.2})", self.label.as_str(), self.confidence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateRound {
    pub round: u32,
    pub challenge: String,
    pub reply: String,
    pub revised: ThreatAssessment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub initial: ThreatAssessment,
    pub rounds: Vec<DebateRound>,
    pub rounds_used: u32,
    /// Set when a backend or parse error cut the debate short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl DebateTranscript {
    pub fn summary(&self, fin: &ThreatAssessment) -> String {
        let mut line = format!(
            "Debate: {} round(s), {} -> {}",
            self.rounds_used,
            self.initial.brief(),
            fin.brief()
        );
        if let Some(failure) = &self.failure {
            line.push_str(&format!(", ended early ({failure})"));
        }
        line.push('.');
        line
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Alert,
    NoAlert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Risk {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub confidence: f64,
    pub explanation: String,
    pub risk: Risk,
    pub assessment: ThreatAssessment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<DebateTranscript>,
}

/// Half-open confidence interval `[low, high)` that triggers a debate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebateBand {
    pub low: f64,
    pub high: f64,
}

impl DebateBand {
    pub fn contains(&self, confidence: f64) -> bool {
        self.low <= confidence && confidence < self.high
    }
}

/// The `[policy]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct AgentPolicy {
    pub alert_threshold: f64,
    pub debate_band: DebateBand,
    pub max_debate_rounds: u32,
    pub high_risk_threshold: f64,
    /// Route the final decision through the situation backend instead of
    /// deriving it locally from the final assessment.
    pub decision_via_backend: bool,
}

#[derive(Deserialize)]
#[serde(default)]
struct RawPolicy {
    alert_threshold: f64,
    debate_band: DebateBand,
    max_debate_rounds: u32,
    high_risk_threshold: f64,
    decision_via_backend: bool,
}

impl Default for RawPolicy {
    fn default() -> Self {
        let p = AgentPolicy::default();
        Self {
            alert_threshold: p.alert_threshold,
            debate_band: p.debate_band,
            max_debate_rounds: p.max_debate_rounds,
            high_risk_threshold: p.high_risk_threshold,
            decision_via_backend: p.decision_via_backend,
        }
    }
}

impl TryFrom<RawPolicy> for AgentPolicy {
    type Error = AgentsError;

    fn try_from(raw: RawPolicy) -> Result<Self, Self::Error> {
        let policy = AgentPolicy {
            alert_threshold: raw.alert_threshold,
            debate_band: raw.debate_band,
            max_debate_rounds: raw.max_debate_rounds,
            high_risk_threshold: raw.high_risk_threshold,
            decision_via_backend: raw.decision_via_backend,
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl Default for AgentPolicy {
    fn default() -> Self {
        Self {
            alert_threshold: 0.80,
            debate_band: DebateBand {
                low: 0.40,
                high: 0.80,
            },
            max_debate_rounds: 3,
            high_risk_threshold: 0.90,
            decision_via_backend: false,
        }
    }
}

impl AgentPolicy {
    pub fn validate(&self) -> Result<(), AgentsError> {
        let band = self.debate_band;
        if !(0.0 <= band.low && band.low < band.high && band.high <= 1.0) {
            return Err(AgentsError::InvalidPolicy(format!(
                "debate band [{}, {}) must satisfy 0 <= low < high <= 1",
                band.low, band.high
            )));
        }
        if !(0.0..=1.0).contains(&self.alert_threshold) || self.alert_threshold < band.low {
            return Err(AgentsError::InvalidPolicy(format!(
                "alert_threshold {} must be in [{}, 1]",
                self.alert_threshold, band.low
            )));
        }
        if !(0.0..=1.0).contains(&self.high_risk_threshold) {
            return Err(AgentsError::InvalidPolicy(format!(
                "high_risk_threshold {} must be in [0, 1]",
                self.high_risk_threshold
            )));
        }
        Ok(())
    }

    pub fn with_alert_threshold(&self, alert_threshold: f64) -> Self {
        Self {
            alert_threshold,
            ..self.clone()
        }
    }
}
