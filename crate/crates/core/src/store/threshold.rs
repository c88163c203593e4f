use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::FeedbackVerdict;

pub const THRESHOLD_FLOOR: f64 = 0.75;
pub const THRESHOLD_CAP: f64 = 0.95;

// Adaptation runs in basis points so repeated steps stay exact.
const FLOOR_BP: i64 = 7500;
const CAP_BP: i64 = 9500;
const RAISE_BP: i64 = 100;
const LOWER_BP: i64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChange {
    pub at: DateTime<Utc>,
    pub old: f64,
    pub new: f64,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub alert_threshold: f64,
    pub history: Vec<ThresholdChange>,
}

impl ThresholdState {
    pub fn new(alert_threshold: f64) -> Self {
        Self {
            alert_threshold,
            history: Vec::new(),
        }
    }
}

fn to_bp(t: f64) -> i64 {
    (t * 10_000.0).round() as i64
}

/// One feedback step: a confirmed false alarm raises the threshold by 0.01,
/// a confirmed detection lowers it by 0.005, within [0.75, 0.95]. A threshold
/// configured outside that range is never pushed further out, and is not
/// snapped into it either.
pub fn adapt_threshold(current: f64, verdict: FeedbackVerdict) -> f64 {
    let bp = to_bp(current);
    let next = match verdict {
        FeedbackVerdict::ConfirmedFalse => (bp + RAISE_BP).min(CAP_BP.max(bp)),
        FeedbackVerdict::ConfirmedTrue => (bp - LOWER_BP).max(FLOOR_BP.min(bp)),
    };
    next as f64 / 10_000.0
}
