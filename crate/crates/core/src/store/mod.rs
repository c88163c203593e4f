//! Append-only incident ledger with evidence files and threshold adaptation.
//!
//! Layout under the store root:
//!
//! ```text
//! incidents.jsonl                 one JSON record per line, "incident/v1"
//! incidents.jsonl.quarantine      torn tail records moved aside at open
//! evidence/<incident_id>/<seq>.png
//! ```

mod ledger;
mod threshold;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{CaptionSequence, Decision, DebateTranscript, Risk, ThreatAssessment, Verdict};
use crate::alerting::DeliveryReport;
use crate::ingest::BatchId;

pub use ledger::{Recovery, Store, StoreOptions};
pub use threshold::{adapt_threshold, ThresholdChange, ThresholdState, THRESHOLD_CAP, THRESHOLD_FLOOR};

pub const INCIDENT_SCHEMA: &str = "incident/v1";
pub const LEDGER_FILE: &str = "incidents.jsonl";
pub const QUARANTINE_FILE: &str = "incidents.jsonl.quarantine";
pub const EVIDENCE_DIR: &str = "evidence";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full: {0}")]
    StorageFull(String),
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("unknown incident {0}")]
    UnknownIncident(String),
    #[error("incident {0} is not an alert; feedback only applies to alerts")]
    FeedbackOnNonAlert(String),
    #[error("incident {0} already exists")]
    DuplicateIncident(String),
    #[error("a cycle needs a decision or an error marker")]
    MissingDecision,
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// A stored frame of a cycle. `path` is relative to the store root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub frame_seq: u64,
    pub path: String,
    pub sha256: String,
    pub captured_at: DateTime<Utc>,
}

/// Marks a cycle that could not produce a decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleError {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackVerdict {
    ConfirmedTrue,
    ConfirmedFalse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorFeedback {
    pub verdict: FeedbackVerdict,
    pub operator_id: String,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One analysis cycle. The cycle record itself is immutable once written;
/// `delivery`, `feedback`, `feedback_history`, and `acked_at` are attached
/// from later ledger records when the store is read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub incident_id: String,
    pub batch_id: BatchId,
    pub source_id: String,
    pub created_at: DateTime<Utc>,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub frames: Vec<EvidenceRef>,
    pub caption_seq: Option<CaptionSequence>,
    pub assessment_initial: Option<ThreatAssessment>,
    pub transcript: Option<DebateTranscript>,
    pub decision: Option<Decision>,
    #[serde(default)]
    pub error: Option<CycleError>,
    #[serde(default)]
    pub delivery: Option<DeliveryReport>,
    #[serde(default)]
    pub feedback: Option<OperatorFeedback>,
    #[serde(default)]
    pub feedback_history: Vec<OperatorFeedback>,
    #[serde(default)]
    pub acked_at: Option<DateTime<Utc>>,
    pub stage_latencies_ms: BTreeMap<String, f64>,
}

impl Incident {
    /// A cycle with no id yet (the store assigns one) and no frames.
    pub fn draft(batch_id: BatchId, source_id: impl Into<String>, window: (DateTime<Utc>, DateTime<Utc>)) -> Self {
        Self {
            incident_id: String::new(),
            batch_id,
            source_id: source_id.into(),
            created_at: Utc::now(),
            window_start: window.0,
            window_end: window.1,
            frames: Vec::new(),
            caption_seq: None,
            assessment_initial: None,
            transcript: None,
            decision: None,
            error: None,
            delivery: None,
            feedback: None,
            feedback_history: Vec::new(),
            acked_at: None,
            stage_latencies_ms: BTreeMap::new(),
        }
    }

    pub fn is_alert(&self) -> bool {
        self.decision.as_ref().is_some_and(|d| d.verdict == Verdict::Alert)
    }

    pub fn summary(&self) -> IncidentSummary {
        IncidentSummary {
            incident_id: self.incident_id.clone(),
            batch_id: self.batch_id,
            created_at: self.created_at,
            verdict: self.decision.as_ref().map(|d| d.verdict),
            confidence: self.decision.as_ref().map(|d| d.confidence),
            risk: self.decision.as_ref().map(|d| d.risk),
            thumbnail_url: self
                .frames
                .last()
                .map(|f| format!("/evidence/{}/{}.png", self.incident_id, f.frame_seq)),
            feedback_status: self.feedback.as_ref().map(|f| f.verdict),
            debate_rounds: self.transcript.as_ref().map_or(0, |t| t.rounds_used),
            error: self.error.clone(),
            acked: self.acked_at.is_some(),
        }
    }
}

/// Row shape served by `/api/incidents`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentSummary {
    pub incident_id: String,
    pub batch_id: BatchId,
    pub created_at: DateTime<Utc>,
    pub verdict: Option<Verdict>,
    pub confidence: Option<f64>,
    pub risk: Option<Risk>,
    pub thumbnail_url: Option<String>,
    /// `None` until an operator has reviewed the alert.
    pub feedback_status: Option<FeedbackVerdict>,
    pub debate_rounds: u32,
    pub error: Option<CycleError>,
    pub acked: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFilter {
    #[serde(default)]
    pub since: Option<DateTime<Utc>>,
    #[serde(default)]
    pub verdict: Option<Verdict>,
    #[serde(default)]
    pub risk: Option<Risk>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
}

impl QueryFilter {
    pub fn matches(&self, incident: &Incident) -> bool {
        let decision = incident.decision.as_ref();
        self.since.is_none_or(|t| incident.created_at >= t)
            && self.verdict.is_none_or(|v| decision.map(|d| d.verdict) == Some(v))
            && self.risk.is_none_or(|r| decision.map(|d| d.risk) == Some(r))
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use crate::agents::{Risk, ThreatLabel};
    use crate::ingest::test_util::frame_at;
    use crate::ingest::FrameBatch;

    pub fn batch(id: u64) -> FrameBatch {
        let start = (id - 1) * 5;
        FrameBatch::new(
            BatchId(id),
            (1..=5).map(|k| frame_at(start + k, (start + k) as i64)).collect(),
        )
        .unwrap()
    }

    pub fn decided(batch: &FrameBatch, verdict: Verdict, confidence: f64) -> Incident {
        let mut incident = Incident::draft(
            batch.batch_id(),
            "test",
            (batch.window_start(), batch.window_end()),
        );
        let label = match verdict {
            Verdict::Alert => ThreatLabel::Abduction,
            Verdict::NoAlert => ThreatLabel::Normal,
        };
        let assessment =
            ThreatAssessment::new(label, confidence, "scripted", vec!["cue".into()]).unwrap();
        incident.assessment_initial = Some(assessment.clone());
        incident.decision = Some(Decision {
            verdict,
            confidence,
            explanation: "scripted".into(),
            risk: Risk::Low,
            assessment,
            transcript: None,
        });
        incident
    }
}
