use std::path::Path;

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};

use crate::agents::{Decision, Verdict};
use crate::store::Incident;

use super::{Alert, AlertError, Location, SiteConfig, ALERT_SCHEMA};

pub const SUMMARY_MAX_CHARS: usize = 400;

/// Stable alert id derived from the incident id.
pub fn alert_id_for(incident_id: &str) -> String {
    let digest = Sha256::digest(incident_id.as_bytes());
    format!("A-{}", &hex::encode(digest)[..16])
}

/// Collapses whitespace and cuts at a word boundary so the result, including
/// a trailing ellipsis when cut, fits in `max_chars`.
pub fn truncate_summary(text: &str, max_chars: usize) -> String {
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if normalized.chars().count() <= max_chars {
        return normalized;
    }
    let budget = max_chars.saturating_sub(1);
    let cut: String = normalized.chars().take(budget + 1).collect();
    // `cut` holds one extra char so a word ending exactly at the budget survives
    let end = match cut.rfind(' ') {
        Some(i) => i,
        None => return normalized.chars().take(budget).collect::<String>() + "…",
    };
    format!("{}…", cut[..end].trim_end())
}

/// Builds the alert for an incident whose decision is an alert. Evidence is
/// the cycle's stored frames (or the last `evidence_top_k` of them); every
/// file must still exist under `store_root`.
pub fn compose_alert(
    decision: &Decision,
    incident: &Incident,
    site: &SiteConfig,
    store_root: &Path,
    now: DateTime<Utc>,
) -> Result<Alert, AlertError> {
    if decision.verdict != Verdict::Alert {
        return Err(AlertError::NotAnAlert);
    }
    let skip = site
        .evidence_top_k
        .map(|k| incident.frames.len().saturating_sub(k))
        .unwrap_or(0);
    let evidence: Vec<_> = incident.frames.iter().skip(skip).cloned().collect();
    if evidence.is_empty() {
        return Err(AlertError::MissingEvidence {
            incident_id: incident.incident_id.clone(),
            path: "<no frames>".into(),
        });
    }
    for e in &evidence {
        let path = store_root.join(&e.path);
        if !path.is_file() {
            return Err(AlertError::MissingEvidence {
                incident_id: incident.incident_id.clone(),
                path: path.display().to_string(),
            });
        }
    }
    let base = site
        .public_base_url
        .as_deref()
        .unwrap_or("")
        .trim_end_matches('/');
    let evidence_urls = evidence
        .iter()
        .map(|e| {
            format!(
                "{base}/evidence/{}/{}.png",
                incident.incident_id, e.frame_seq
            )
        })
        .collect();

    Ok(Alert {
        schema: ALERT_SCHEMA.into(),
        alert_id: alert_id_for(&incident.incident_id),
        incident_id: incident.incident_id.clone(),
        created_at: now.max(incident.window_end),
        location: Location {
            site: site.label.clone(),
            lat: site.lat,
            lon: site.lon,
        },
        summary: truncate_summary(&decision.explanation, SUMMARY_MAX_CHARS),
        confidence: decision.confidence,
        risk: decision.risk,
        evidence_urls,
        evidence,
    })
}
