use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::alerting::{ChannelConfig, ChannelKind};
use crate::gateway::BackendConfig;
use crate::ingest::{PreprocessParams, SourceConfig};
use crate::pipeline::{percentile, Pipeline, PipelineConfig, RunSummary};
use crate::store::Incident;

use super::report::{Classification, EvalReport, ScenarioOutcome, ScenarioTiming, TimingSummary};
use super::{materialize_frames, ScenarioScript};

/// Config values applied on top of each scenario's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_debate_rounds: Option<u32>,
    /// Analysis workers per scenario run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Scenarios replayed concurrently. Does not change results.
    #[serde(skip)]
    pub parallel: usize,
}

struct Run {
    outcome: ScenarioOutcome,
    cycle_totals: Vec<(f64, bool)>,
    wall_ms: f64,
}

/// Materializes a scenario into `dir` and builds the pipeline config that
/// replays it: scripted backend with injected delays, a file alert channel,
/// and a store under `dir`.
pub fn scenario_config(s: &ScenarioScript, dir: &std::path::Path, o: &ReplayOverrides) -> Result<PipelineConfig, String> {
    let frames = dir.join("frames");
    materialize_frames(s, &frames).map_err(|e| e.to_string())?;
    let script_path = dir.join("script.json");
    let script = serde_json::to_string_pretty(&s.script).map_err(|e| e.to_string())?;
    std::fs::write(&script_path, script).map_err(|e| e.to_string())?;

    let mut source = SourceConfig::directory(frames.display().to_string());
    source.start_time = Some(s.start_time);
    source.source_id = Some(s.name.clone());
    source.preprocess = PreprocessParams::default();
    let mut backend = BackendConfig::scripted(script_path);
    backend.delays = s.injected_delays_ms.script_delays();

    let mut config = PipelineConfig::new(source, backend, dir.join("store"));
    config.pipeline.batch_size = s.batch_size;
    // every batch fits, so replay never drops one
    config.pipeline.queue_capacity = s.batches().max(config.pipeline.queue_capacity);
    config.pipeline.inject_capture_ms = s.injected_delays_ms.capture;
    if let Some(w) = o.workers {
        config.pipeline.workers = w.max(1);
    }
    if let Some(t) = o.alert_threshold {
        config.policy.alert_threshold = t;
    }
    if let Some(r) = o.max_debate_rounds {
        config.policy.max_debate_rounds = r;
    }
    config.site.label = format!("replay: {}", s.name);
    config.dispatch.backoff_base_ms = 1;
    config.channels.insert(
        "replay-log".into(),
        ChannelConfig::new("replay-log", ChannelKind::File, dir.join("alerts.jsonl").display().to_string()),
    );
    Ok(config)
}

fn run_pipeline(config: PipelineConfig) -> Result<(RunSummary, Vec<Incident>), String> {
    let mut handle = Pipeline::start(config).map_err(|e| e.to_string())?;
    let summary = handle.finish();
    let incidents = handle.store().incidents();
    Ok((summary, incidents))
}

fn score(s: &ScenarioScript, result: Result<(RunSummary, Vec<Incident>), String>) -> (ScenarioOutcome, Vec<(f64, bool)>) {
    let file = s
        .path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let expected = s.ground_truth.alert_expected;
    let (summary, incidents) = match result {
        Ok(r) => r,
        Err(e) => {
            let outcome = ScenarioOutcome {
                name: s.name.clone(),
                file,
                category: s.category,
                expected_alert: expected,
                actual_alert: false,
                classification: Classification::of(expected, false),
                confidence: None,
                final_label: None,
                min_alert_confidence: None,
                debate_rounds: 0,
                cycles: 0,
                alerts: 0,
                error: Some(e),
            };
            return (outcome, Vec::new());
        }
    };
    let alerts: Vec<&Incident> = incidents.iter().filter(|i| i.is_alert()).collect();
    let actual = !alerts.is_empty();
    let pool: Vec<&Incident> = if actual {
        alerts.clone()
    } else {
        incidents.iter().filter(|i| i.decision.is_some()).collect()
    };
    // highest confidence wins; the earliest cycle breaks ties
    let deciding = pool.iter().copied().reduce(|best, i| {
        let (a, b) = (best.decision.as_ref().unwrap(), i.decision.as_ref().unwrap());
        if b.confidence > a.confidence { i } else { best }
    });
    let error = incidents
        .iter()
        .find_map(|i| i.error.as_ref().map(|e| format!("batch {}: {} failed: {}", i.batch_id.0, e.stage, e.message)))
        .or_else(|| {
            (summary.residual_frames > 0).then(|| format!("{} frames left unbatched", summary.residual_frames))
        })
        .or_else(|| {
            (summary.dropped_batches > 0).then(|| format!("{} batches dropped", summary.dropped_batches))
        });
    let outcome = ScenarioOutcome {
        name: s.name.clone(),
        file,
        category: s.category,
        expected_alert: expected,
        actual_alert: actual,
        classification: Classification::of(expected, actual),
        confidence: deciding.and_then(|i| i.decision.as_ref()).map(|d| d.confidence),
        final_label: deciding
            .and_then(|i| i.decision.as_ref())
            .map(|d| d.assessment.label.as_str().to_string()),
        min_alert_confidence: alerts
            .iter()
            .filter_map(|i| i.decision.as_ref().map(|d| d.confidence))
            .reduce(f64::min),
        debate_rounds: incidents
            .iter()
            .filter_map(|i| i.transcript.as_ref())
            .map(|t| t.rounds_used)
            .max()
            .unwrap_or(0),
        cycles: summary.cycles,
        alerts: alerts.len() as u64,
        error,
    };
    let totals = summary
        .report
        .cycles
        .iter()
        .filter(|c| !c.failed)
        .map(|c| (c.total_ms, c.debated))
        .collect();
    (outcome, totals)
}

/// Replays one scenario in a scratch directory.
pub fn replay_scenario(s: &ScenarioScript, overrides: &ReplayOverrides) -> ScenarioOutcome {
    replay_one(s, overrides).outcome
}

fn replay_one(s: &ScenarioScript, overrides: &ReplayOverrides) -> Run {
    let started = Instant::now();
    let result = tempfile::Builder::new()
        .prefix("childwatch-replay-")
        .tempdir()
        .map_err(|e| e.to_string())
        .and_then(|dir| {
            let config = scenario_config(s, dir.path(), overrides)?;
            run_pipeline(config)
        });
    if let Err(e) = &result {
        warn!(scenario = %s.name, error = %e, "scenario failed to run");
    }
    let (outcome, cycle_totals) = score(s, result);
    info!(
        scenario = %s.name,
        classification = ?outcome.classification,
        confidence = ?outcome.confidence,
        "scenario replayed"
    );
    Run {
        outcome,
        cycle_totals,
        wall_ms: started.elapsed().as_secs_f64() * 1000.0,
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Replays every scenario and scores the suite. Scenario failures are
/// recorded in their row; replay always continues.
pub fn replay(scenarios: &[ScenarioScript], overrides: &ReplayOverrides) -> EvalReport {
    let started = Instant::now();
    let threads = overrides.parallel.clamp(1, scenarios.len().max(1));
    let slots: Vec<Mutex<Option<Run>>> = scenarios.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(s) = scenarios.get(i) else { break };
                let run = replay_one(s, overrides);
                *slots[i].lock().expect("slot lock") = Some(run);
            });
        }
    });
    let runs: Vec<Run> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every scenario ran"))
        .collect();

    let all: Vec<f64> = runs.iter().flat_map(|r| r.cycle_totals.iter().map(|c| c.0)).collect();
    let debated: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.cycle_totals.iter().filter(|c| c.1).map(|c| c.0))
        .collect();
    let plain: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.cycle_totals.iter().filter(|c| !c.1).map(|c| c.0))
        .collect();
    let timing = TimingSummary {
        generated_at: chrono::Utc::now(),
        total_wall_ms: started.elapsed().as_secs_f64() * 1000.0,
        cycles: all.len(),
        mean_cycle_ms: mean(&all),
        p50_cycle_ms: (!all.is_empty()).then(|| percentile(&all, 50.0)),
        p95_cycle_ms: (!all.is_empty()).then(|| percentile(&all, 95.0)),
        mean_cycle_ms_debated: mean(&debated),
        mean_cycle_ms_plain: mean(&plain),
        scenarios: runs
            .iter()
            .map(|r| ScenarioTiming {
                name: r.outcome.name.clone(),
                mean_cycle_ms: mean(&r.cycle_totals.iter().map(|c| c.0).collect::<Vec<_>>()),
                wall_ms: r.wall_ms,
            })
            .collect(),
    };
    EvalReport::new(
        overrides.clone(),
        runs.into_iter().map(|r| r.outcome).collect(),
        Some(timing),
    )
}
