mod common;

use std::sync::Arc;
use std::time::Duration;

use childwatch::agents::{Verdict, Workflow};
use childwatch::gateway::{Backend, GatewayError, ModelRequest, ModelResponse, PromptPack, ScriptDelays, ScriptedBackend};
use childwatch::pipeline::{EndReason, Pipeline, PipelineError};
use common::{assessment, benign_script, Fixture};

#[test]
fn ten_frames_make_two_cycles_then_end_of_stream() {
    let fx = Fixture::new(10, &benign_script(10));
    let summary = Pipeline::run_once(fx.config.clone()).unwrap();
    assert_eq!(summary.end, EndReason::EndOfStream);
    assert_eq!(summary.cycles, 2);
    assert_eq!(summary.alerts, 0);
    assert_eq!(summary.residual_frames, 0);
    let store = childwatch::store::Store::open(fx.path("store"), childwatch::store::StoreOptions::new(0.8)).unwrap();
    let incidents = store.incidents();
    assert_eq!(incidents.len(), 2);
    assert_eq!(incidents[0].batch_id.0, 1);
    assert_eq!(incidents[1].frames.iter().map(|f| f.frame_seq).collect::<Vec<_>>(), vec![6, 7, 8, 9, 10]);
    assert!(incidents.iter().all(|i| i.decision.as_ref().unwrap().verdict == Verdict::NoAlert));
}

#[test]
fn abduction_script_dispatches_one_alert_with_debate_transcript() {
    let mut script = benign_script(5);
    script.insert("situation".into(), assessment("abduction", 0.65, &["adult pulls child by the wrist"]));
    script.insert("debate:1:challenge".into(), "Frame 4 shows the child pulling away; is that resistance?".into());
    script.insert("debate:1:reply".into(), "Yes, the child leans away and looks back toward the swings.".into());
    script.insert("debate:1".into(), assessment("abduction", 0.9, &["child resists", "unknown adult"]));
    let fx = Fixture::new(5, &script).with_file_channel("ops");
    let summary = Pipeline::run_once(fx.config.clone()).unwrap();
    assert_eq!(summary.alerts, 1);

    let lines = std::fs::read_to_string(fx.path("ops.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1);
    let alert: serde_json::Value = serde_json::from_str(lines.trim()).unwrap();
    assert_eq!(alert["schema"], "alert/v1");
    assert_eq!(alert["evidence_urls"].as_array().unwrap().len(), 5);

    let store = childwatch::store::Store::open(fx.path("store"), childwatch::store::StoreOptions::new(0.8)).unwrap();
    let incident = &store.incidents()[0];
    let transcript = incident.transcript.as_ref().expect("debate ran");
    assert_eq!(transcript.rounds_used, 1);
    assert_eq!(incident.decision.as_ref().unwrap().confidence, 0.9);
    assert_eq!(incident.delivery.as_ref().unwrap().delivered_count(), 1);
}

#[test]
fn a_failing_cycle_is_persisted_with_an_error_and_the_next_proceeds() {
    let mut script = benign_script(10);
    script.remove("situation");
    script.insert("situation@2".into(), assessment("normal", 0.2, &[]));
    let fx = Fixture::new(10, &script);
    let summary = Pipeline::run_once(fx.config.clone()).unwrap();
    assert_eq!(summary.cycles, 2);
    assert_eq!(summary.errors, 1);
    let store = childwatch::store::Store::open(fx.path("store"), childwatch::store::StoreOptions::new(0.8)).unwrap();
    let incidents = store.incidents();
    let err = incidents[0].error.as_ref().unwrap();
    assert_eq!(err.stage, "situation");
    assert!(incidents[0].decision.is_none());
    assert!(incidents[0].caption_seq.is_some());
    assert!(incidents[1].decision.is_some());
}

#[test]
fn concurrent_workers_persist_in_batch_order() {
    let fx = Fixture::new(30, &benign_script(30));
    let mut config = fx.config.clone();
    config.pipeline.workers = 3;
    config.pipeline.queue_capacity = 10;
    let image = ScriptedBackend::from_file(&fx.path("script.json")).unwrap();
    // uneven caption latency so workers finish out of order
    struct Jittery(ScriptedBackend);
    impl Backend for Jittery {
        fn id(&self) -> &str {
            self.0.id()
        }
        fn complete(&self, r: &ModelRequest) -> Result<ModelResponse, GatewayError> {
            if let Some(b) = r.batch {
                std::thread::sleep(Duration::from_millis((7 - b % 3 * 3) * 3));
            }
            self.0.complete(r)
        }
    }
    let backend: Arc<dyn Backend> = Arc::new(Jittery(image));
    let workflow = Workflow::new(backend.clone(), backend, PromptPack::default());
    let summary = Pipeline::start_with(config, workflow).unwrap().wait();
    assert_eq!(summary.cycles, 6);
    let store = childwatch::store::Store::open(fx.path("store"), childwatch::store::StoreOptions::new(0.8)).unwrap();
    let order: Vec<u64> = store.incidents().iter().map(|i| i.batch_id.0).collect();
    assert_eq!(order, vec![1, 2, 3, 4, 5, 6]);
}

#[test]
fn injected_delays_show_up_in_stage_timings() {
    let fx = Fixture::new(5, &benign_script(5));
    let mut config = fx.config.clone();
    config.pipeline.inject_capture_ms = 50;
    config.backend.image.delays = ScriptDelays {
        caption_ms: 20,
        situation_ms: 60,
        ..ScriptDelays::default()
    };
    let report = Pipeline::run_once(config).unwrap().report;
    let c = &report.cycles[0];
    assert!(c.capture_ms >= 50.0 && c.capture_ms < 80.0, "{c:?}");
    assert!(c.caption_ms >= 100.0 && c.caption_ms < 150.0, "{c:?}");
    assert!(c.analysis_ms >= 60.0 && c.analysis_ms < 90.0, "{c:?}");
    assert!((c.total_ms - (c.capture_ms + c.caption_ms + c.analysis_ms)).abs() < 1e-9);
}

#[test]
fn startup_errors_are_reported() {
    let fx = Fixture::new(5, &benign_script(5));
    let mut bad = fx.config.clone();
    bad.pipeline.queue_capacity = 0;
    assert!(matches!(Pipeline::start(bad), Err(PipelineError::FatalConfig(_))));
    let mut missing = fx.config.clone();
    missing.source.path_or_url = fx.path("nope").display().to_string();
    assert!(matches!(Pipeline::start(missing), Err(PipelineError::Source(_))));
}

#[test]
fn a_stalled_analyzer_drops_oldest_batches_and_capture_keeps_cadence() {
    use common::backpressure::{run, simulate, BATCH, CAPACITY, FRAMES};
    let out = run();
    let (analyzed, dropped) = simulate(FRAMES / BATCH as u64, CAPACITY);
    let ids = |v: &[childwatch::ingest::BatchId]| v.iter().map(|b| b.0).collect::<Vec<_>>();
    assert_eq!(ids(&out.at_capture_end.dropped_batch_ids), dropped);
    assert_eq!(out.persisted, analyzed);
    assert_eq!(out.summary.dropped_batches, dropped.len() as u64);
    assert_eq!(out.summary.cycles, analyzed.len() as u64);
    let capture = &out.at_capture_end.capture;
    assert!(capture.max_jitter_ratio < 0.10, "{capture:?}");
    assert!((capture.mean_interval_ms - 100.0).abs() < 5.0, "{capture:?}");
}
