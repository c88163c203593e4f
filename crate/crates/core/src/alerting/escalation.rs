use serde::{Deserialize, Serialize};

use crate::agents::Risk;

use super::AlertError;

/// The `[escalation]` config section. Each tier is a group of channel names;
/// tier 0 receives every alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationPolicy {
    pub tiers: Vec<Vec<String>>,
    /// Extra tiers engaged immediately for high-risk alerts.
    #[serde(default)]
    pub high_risk_extra_tiers: usize,
    pub ack_timeout_s: u64,
}

impl EscalationPolicy {
    pub fn validate(&self) -> Result<(), AlertError> {
        if self.tiers.is_empty() {
            return Err(AlertError::InvalidEscalation("at least one tier is required".into()));
        }
        if self.ack_timeout_s == 0 {
            return Err(AlertError::InvalidEscalation("ack_timeout_s must be positive".into()));
        }
        Ok(())
    }

    /// Single tier holding every given channel, no timeout escalation beyond it.
    pub fn single_tier(channels: Vec<String>) -> Self {
        Self {
            tiers: vec![channels],
            high_risk_extra_tiers: 0,
            ack_timeout_s: 300,
        }
    }
}

/// Operator acknowledgment, as seconds after the alert went out.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AckState {
    pub acked_after_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationAction {
    pub tier: usize,
    /// Seconds after the alert at which the tier is notified.
    pub at_s: f64,
    pub channels: Vec<String>,
}

/// Plans which tiers get notified and when. High-risk alerts engage
/// `high_risk_extra_tiers` beyond tier 0 at once; each later tier follows one
/// `ack_timeout_s` after the previous engagement unless the operator has
/// acknowledged before it is due. Pure and finite.
pub fn plan_escalation(risk: Risk, policy: &EscalationPolicy, ack: AckState) -> Vec<EscalationAction> {
    let last_immediate = match risk {
        Risk::High => policy.high_risk_extra_tiers,
        Risk::Low => 0,
    }
    .min(policy.tiers.len().saturating_sub(1));
    policy
        .tiers
        .iter()
        .enumerate()
        .map(|(tier, channels)| {
            let steps = tier.saturating_sub(last_immediate);
            EscalationAction {
                tier,
                at_s: (steps as u64 * policy.ack_timeout_s) as f64,
                channels: channels.clone(),
            }
        })
        .filter(|a| a.at_s == 0.0 || ack.acked_after_s.map_or(true, |t| t >= a.at_s))
        .collect()
}
