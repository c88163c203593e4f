//! Alert composition, delivery, and escalation.

mod channels;
mod compose;
mod dispatch;
mod escalation;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Risk;
use crate::store::EvidenceRef;

pub use channels::{build_channel, validate_destination, Channel, SendError};
pub use compose::{alert_id_for, compose_alert, truncate_summary, SUMMARY_MAX_CHARS};
pub use dispatch::{dispatch, dispatch_with, DeliveryLedger, DispatchRetry, MemoryLedger};
pub use escalation::{plan_escalation, AckState, EscalationAction, EscalationPolicy};

pub const ALERT_SCHEMA: &str = "alert/v1";

#[derive(Debug, Error)]
pub enum AlertError {
    #[error("decision is not an alert")]
    NotAnAlert,
    #[error("evidence missing for incident {incident_id}: {path}")]
    MissingEvidence { incident_id: String, path: String },
    #[error("no enabled channels")]
    NoChannels,
    #[error("every channel failed for alert {}", report.alert_id)]
    AllChannelsFailed { report: DeliveryReport },
    #[error("invalid channel `{name}`: {reason}")]
    InvalidChannel { name: String, reason: String },
    #[error("invalid escalation policy: {0}")]
    InvalidEscalation(String),
}

/// Where the camera is. Part of every alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SiteConfig {
    pub label: String,
    #[serde(default)]
    pub lat: Option<f64>,
    #[serde(default)]
    pub lon: Option<f64>,
    /// Base URL under which the daemon serves `/evidence/...`.
    #[serde(default)]
    pub public_base_url: Option<String>,
    /// Attach only the last K frames of the cycle; all frames when unset.
    #[serde(default)]
    pub evidence_top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub site: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
}

/// A dispatchable alert. Serializes to the `alert/v1` JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub schema: String,
    pub alert_id: String,
    pub incident_id: String,
    pub created_at: DateTime<Utc>,
    pub location: Location,
    pub summary: String,
    pub confidence: f64,
    pub risk: Risk,
    pub evidence_urls: Vec<String>,
    /// Stored evidence files backing `evidence_urls`, in capture order.
    #[serde(skip)]
    pub evidence: Vec<EvidenceRef>,
}

impl Alert {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("alert serializes")
    }

    /// Plain-text body for SMS-class channels.
    pub fn message_body(&self) -> String {
        let risk = match self.risk {
            Risk::High => "HIGH RISK",
            Risk::Low => "Alert",
        };
        let mut body = format!(
            "{risk}: possible child abduction at {} ({}). {} Confidence {:.0}%. Ref {}.",
            self.location.site,
            self.created_at.format("%Y-%m-%d %H:%M:%S UTC"),
            self.summary,
            self.confidence * 100.0,
            self.alert_id
        );
        if let (Some(lat), Some(lon)) = (self.location.lat, self.location.lon) {
            body.push_str(&format!(" Location {lat:.5},{lon:.5}."));
        }
        body
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Sms,
    Whatsapp,
    Email,
    Webhook,
    File,
    Stdout,
}

/// One `[channels.<name>]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Filled from the section name when loaded from the daemon config.
    #[serde(default)]
    pub name: String,
    pub kind: ChannelKind,
    #[serde(default)]
    pub destination: String,
    #[serde(default = "default_enabled")]
    pub enabled: bool,
    /// Sender number or address for sms, whatsapp, and email.
    #[serde(default)]
    pub from: Option<String>,
    /// Provider base URL (Twilio-compatible REST) or SMTP relay host.
    #[serde(default)]
    pub base_url: Option<String>,
    /// Credential role → environment variable name. sms/whatsapp use
    /// `account_sid` and `auth_token`; email uses `username` and `password`;
    /// webhook may use `bearer_token`.
    #[serde(default)]
    pub credentials_env: BTreeMap<String, String>,
}

fn default_enabled() -> bool {
    true
}

impl ChannelConfig {
    pub fn new(name: impl Into<String>, kind: ChannelKind, destination: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            destination: destination.into(),
            enabled: true,
            from: None,
            base_url: None,
            credentials_env: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), AlertError> {
        validate_destination(self).map_err(|reason| AlertError::InvalidChannel {
            name: self.name.clone(),
            reason,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DeliveryOutcome {
    Delivered { retried: u32 },
    Failed { attempts: u32, error: String },
    SkippedDuplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDelivery {
    pub channel: String,
    pub kind: ChannelKind,
    pub outcome: DeliveryOutcome,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_message_id: Option<String>,
}

/// Per-channel results of one dispatch, in channel config order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub alert_id: String,
    pub entries: Vec<ChannelDelivery>,
}

impl DeliveryReport {
    pub fn delivered_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.outcome, DeliveryOutcome::Delivered { .. }))
            .count()
    }

    pub fn all_failed(&self) -> bool {
        !self.entries.is_empty()
            && self
                .entries
                .iter()
                .all(|e| matches!(e.outcome, DeliveryOutcome::Failed { .. }))
    }
}
