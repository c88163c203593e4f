use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ingest::BatchId;

/// Completed cycles kept for the rolling percentiles.
pub const METRICS_WINDOW: usize = 1000;
const CAPTURE_WINDOW: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTiming {
    pub batch_id: BatchId,
    pub capture_ms: f64,
    pub caption_ms: f64,
    /// Situation analysis, debate, and decision.
    pub analysis_ms: f64,
    pub debate_ms: f64,
    pub debated: bool,
    pub total_ms: f64,
    #[serde(default)]
    pub failed: bool,
}

impl CycleTiming {
    pub fn new(batch_id: BatchId, capture_ms: f64, caption_ms: f64, analysis_ms: f64, debate_ms: f64, debated: bool) -> Self {
        Self {
            batch_id,
            capture_ms,
            caption_ms,
            analysis_ms,
            debate_ms,
            debated,
            total_ms: capture_ms + caption_ms + analysis_ms,
            failed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StagePercentiles {
    pub capture: Percentiles,
    pub caption: Percentiles,
    pub analysis: Percentiles,
    pub debate: Percentiles,
    pub cycle: Percentiles,
}

/// Regularity of the capture clock, from frame acquisition instants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureStats {
    pub frames: u64,
    pub expected_interval_ms: f64,
    pub mean_interval_ms: f64,
    /// Largest |interval − expected| / expected over the window.
    pub max_jitter_ratio: f64,
}

/// Host figures for operators; informative only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceStats {
    pub rss_bytes: Option<u64>,
    pub cpu_seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub cycles_completed: u64,
    pub cycles_failed: u64,
    pub dropped_batches: u64,
    pub dropped_batch_ids: Vec<BatchId>,
    pub debate_rate: f64,
    pub queue_depth: usize,
    pub percentiles: StagePercentiles,
    /// Mean total of cycles with and without a debate.
    pub mean_cycle_ms_debated: Option<f64>,
    pub mean_cycle_ms_plain: Option<f64>,
    pub budget_overruns: u64,
    pub capture: CaptureStats,
    pub resources: ResourceStats,
    /// Most recent cycles, oldest first.
    pub cycles: Vec<CycleTiming>,
}

/// Nearest-rank percentile of unsorted values; 0 when empty.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn percentiles(values: &[f64]) -> Percentiles {
    Percentiles {
        p50: percentile(values, 50.0),
        p95: percentile(values, 95.0),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Default)]
struct Inner {
    cycles: VecDeque<CycleTiming>,
    completed: u64,
    failed: u64,
    debated: u64,
    dropped: Vec<BatchId>,
    overruns: u64,
    capture_ticks: VecDeque<Instant>,
    frames: u64,
    expected_interval_ms: f64,
}

/// Shared recorder written by the pipeline stages and read by `/metrics`.
#[derive(Default)]
pub struct Metrics {
    inner: Mutex<Inner>,
}

impl Metrics {
    pub fn new(cadence_hz: f64) -> Self {
        let m = Self::default();
        m.inner.lock().expect("metrics poisoned").expected_interval_ms = 1000.0 / cadence_hz;
        m
    }

    pub fn record_frame(&self, at: Instant) {
        let mut inner = self.inner.lock().expect("metrics poisoned");
        inner.frames += 1;
        if inner.capture_ticks.len() == CAPTURE_WINDOW {
            inner.capture_ticks.pop_front();
        }
        inner.capture_ticks.push_back(at);
    }

    pub fn record_drop(&self, batch_id: BatchId) {
        self.inner.lock().expect("metrics poisoned").dropped.push(batch_id);
    }

    pub fn record_overrun(&self) {
        self.inner.lock().expect("metrics poisoned").overruns += 1;
    }

    pub fn record_cycle(&self, timing: CycleTiming) {
        let mut inner = self.inner.lock().expect("metrics poisoned");
        inner.completed += 1;
        if timing.failed {
            inner.failed += 1;
        }
        if timing.debated {
            inner.debated += 1;
        }
        if inner.cycles.len() == METRICS_WINDOW {
            inner.cycles.pop_front();
        }
        inner.cycles.push_back(timing);
    }

    pub fn cycles_completed(&self) -> u64 {
        self.inner.lock().expect("metrics poisoned").completed
    }

    /// Snapshot over the rolling window. `queue_depth` is supplied by the caller.
    pub fn report(&self, queue_depth: usize) -> LatencyReport {
        let inner = self.inner.lock().expect("metrics poisoned");
        let cycles: Vec<CycleTiming> = inner.cycles.iter().cloned().collect();
        let col = |f: fn(&CycleTiming) -> f64| cycles.iter().map(f).collect::<Vec<_>>();
        let debate_values: Vec<f64> = cycles.iter().filter(|c| c.debated).map(|c| c.debate_ms).collect();

        let intervals: Vec<f64> = inner
            .capture_ticks
            .iter()
            .zip(inner.capture_ticks.iter().skip(1))
            .map(|(a, b)| (*b - *a).as_secs_f64() * 1000.0)
            .collect();
        let expected = inner.expected_interval_ms;
        let capture = CaptureStats {
            frames: inner.frames,
            expected_interval_ms: expected,
            mean_interval_ms: mean(intervals.iter().copied()).unwrap_or(0.0),
            max_jitter_ratio: intervals
                .iter()
                .map(|i| (i - expected).abs() / expected)
                .fold(0.0, f64::max),
        };

        LatencyReport {
            cycles_completed: inner.completed,
            cycles_failed: inner.failed,
            dropped_batches: inner.dropped.len() as u64,
            dropped_batch_ids: inner.dropped.clone(),
            debate_rate: if inner.completed == 0 {
                0.0
            } else {
                inner.debated as f64 / inner.completed as f64
            },
            queue_depth,
            percentiles: StagePercentiles {
                capture: percentiles(&col(|c| c.capture_ms)),
                caption: percentiles(&col(|c| c.caption_ms)),
                analysis: percentiles(&col(|c| c.analysis_ms)),
                debate: percentiles(&debate_values),
                cycle: percentiles(&col(|c| c.total_ms)),
            },
            mean_cycle_ms_debated: mean(cycles.iter().filter(|c| c.debated).map(|c| c.total_ms)),
            mean_cycle_ms_plain: mean(
                cycles.iter().filter(|c| !c.debated && !c.failed).map(|c| c.total_ms),
            ),
            budget_overruns: inner.overruns,
            capture,
            resources: resource_stats(),
            cycles,
        }
    }
}

#[cfg(target_os = "linux")]
fn resource_stats() -> ResourceStats {
    // statm reports pages; stat fields 14 and 15 are utime and stime in clock ticks
    const PAGE: u64 = 4096;
    const TICKS: f64 = 100.0;
    let rss_bytes = std::fs::read_to_string("/proc/self/statm")
        .ok()
        .and_then(|s| s.split_whitespace().nth(1)?.parse::<u64>().ok())
        .map(|pages| pages * PAGE);
    let cpu_seconds = std::fs::read_to_string("/proc/self/stat").ok().and_then(|s| {
        let after = &s[s.rfind(')')? + 2..];
        let fields: Vec<&str> = after.split_whitespace().collect();
        let utime: f64 = fields.get(11)?.parse().ok()?;
        let stime: f64 = fields.get(12)?.parse().ok()?;
        Some((utime + stime) / TICKS)
    });
    ResourceStats {
        rss_bytes,
        cpu_seconds,
    }
}

#[cfg(not(target_os = "linux"))]
fn resource_stats() -> ResourceStats {
    ResourceStats::default()
}
