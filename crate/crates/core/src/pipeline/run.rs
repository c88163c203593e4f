use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tracing::{debug, error, info, warn};

use crate::agents::{AgentPolicy, CycleAnalysis, CycleFailure, Verdict, Workflow};
use crate::alerting::{
    compose_alert, dispatch, plan_escalation, AckState, Alert, AlertError, ChannelConfig,
    DeliveryReport,
};
use crate::gateway::{open_backend, PromptPack};
use crate::ingest::{preprocess, BatchId, Batcher, FrameBatch, FrameSource, IngestError};
use crate::store::{CycleError, Incident, Store, StoreOptions};

use super::http::{self, HttpServer};
use super::metrics::{CycleTiming, LatencyReport, Metrics};
use super::queue::DropOldestQueue;
use super::{PipelineConfig, PipelineError};

const SOURCE_RETRY_LIMIT: u32 = 5;
const EVENT_BUFFER: usize = 256;

/// Server-sent event payload published on every persisted cycle and alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    /// `incident` or `alert`.
    pub event: String,
    pub data: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    EndOfStream,
    Shutdown,
    SourceFailed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub end: EndReason,
    pub cycles: u64,
    pub alerts: u64,
    pub errors: u64,
    pub dropped_batches: u64,
    /// Frames left over in an incomplete final batch.
    pub residual_frames: usize,
    pub report: LatencyReport,
}

pub(crate) struct Job {
    batch: FrameBatch,
    capture_ms: f64,
}

pub(crate) enum Msg {
    Analyzed(Job, Box<Result<CycleAnalysis, CycleFailure>>),
    Dropped(BatchId),
}

struct Pending {
    due: Instant,
    at_s: f64,
    tier: usize,
    incident_id: String,
    alert: Alert,
    channels: Vec<ChannelConfig>,
}

/// State shared by the HTTP interface and the pipeline threads.
pub(crate) struct Shared {
    pub store: Arc<Store>,
    pub metrics: Arc<Metrics>,
    pub queue: Arc<DropOldestQueue<Job>>,
    pub events: broadcast::Sender<StreamEvent>,
    pub policy: AgentPolicy,
    pub running: AtomicBool,
}

impl Shared {
    pub fn report(&self) -> LatencyReport {
        self.metrics.report(self.queue.len())
    }

    pub fn publish(&self, event: &str, data: serde_json::Value) {
        // no subscribers is fine
        let _ = self.events.send(StreamEvent {
            event: event.into(),
            data,
        });
    }
}

pub struct Pipeline;

impl Pipeline {
    /// Validates the config, opens backends, store, source, and HTTP
    /// interface, and starts the stage threads.
    pub fn start(config: PipelineConfig) -> Result<PipelineHandle, PipelineError> {
        config.validate()?;
        let prompts = match &config.pipeline.prompts {
            Some(path) => PromptPack::load(path).map_err(|e| PipelineError::FatalConfig(e.to_string()))?,
            None => PromptPack::default(),
        };
        let image = open_backend(&config.backend.image)
            .map_err(|e| PipelineError::FatalConfig(format!("[backend.image] {e}")))?;
        let situation = match &config.backend.situation {
            Some(c) => open_backend(c)
                .map_err(|e| PipelineError::FatalConfig(format!("[backend.situation] {e}")))?,
            None => image.clone(),
        };
        Self::start_with(config, Workflow::new(image, situation, prompts))
    }

    /// Like [`start`](Self::start) with a caller-built agent workflow.
    pub fn start_with(config: PipelineConfig, workflow: Workflow) -> Result<PipelineHandle, PipelineError> {
        config.validate()?;
        let store = Arc::new(Store::open(
            &config.store.root,
            StoreOptions {
                initial_threshold: config.policy.alert_threshold,
                evidence_quota_bytes: config.store.evidence_quota_mb.map(|mb| mb * 1024 * 1024),
            },
        )?);
        let threshold = store.threshold().alert_threshold;
        if threshold != config.policy.alert_threshold {
            info!(
                configured = config.policy.alert_threshold,
                adapted = threshold,
                "using adapted alert threshold from the ledger"
            );
        }
        let source = FrameSource::open(&config.source)?;
        let metrics = Arc::new(Metrics::new(config.source.cadence_hz));
        let queue = Arc::new(DropOldestQueue::new(config.pipeline.queue_capacity));
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let shared = Arc::new(Shared {
            store: store.clone(),
            metrics,
            queue,
            events,
            policy: config.policy.clone(),
            running: AtomicBool::new(true),
        });
        let http = match config.http_addr()? {
            Some(addr) => Some(http::serve(addr, shared.clone())?),
            None => None,
        };

        let config = Arc::new(config);
        let shutdown = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel::<Msg>();
        let (esc_tx, esc_rx) = mpsc::channel::<Pending>();

        let capture = {
            let (config, shared, shutdown, tx) = (config.clone(), shared.clone(), shutdown.clone(), tx.clone());
            spawn("capture", move || capture_loop(source, &config, &shared, &shutdown, tx))
        };
        let workers = (0..config.pipeline.workers)
            .map(|i| {
                let (shared, tx, workflow) = (shared.clone(), tx.clone(), workflow.clone());
                spawn(&format!("analysis-{i}"), move || analysis_loop(&workflow, &shared, tx))
            })
            .collect();
        drop(tx);
        let persist = {
            let (config, shared) = (config.clone(), shared.clone());
            spawn("persist", move || persist_loop(rx, &config, &shared, esc_tx))
        };
        let escalation = {
            let (config, shared, shutdown) = (config.clone(), shared.clone(), shutdown.clone());
            spawn("escalation", move || escalation_loop(esc_rx, &config, &shared, &shutdown))
        };
        info!(
            source = %config.source.path_or_url,
            workers = config.pipeline.workers,
            queue_capacity = config.pipeline.queue_capacity,
            "pipeline started"
        );
        Ok(PipelineHandle {
            shared,
            shutdown,
            capture: Some(capture),
            workers,
            persist: Some(persist),
            escalation: Some(escalation),
            http,
        })
    }

    /// Runs a finite source to completion and returns the summary.
    pub fn run_once(config: PipelineConfig) -> Result<RunSummary, PipelineError> {
        Ok(Self::start(config)?.wait())
    }
}

fn spawn<T: Send + 'static>(name: &str, f: impl FnOnce() -> T + Send + 'static) -> JoinHandle<T> {
    thread::Builder::new()
        .name(name.into())
        .spawn(f)
        .expect("spawn pipeline thread")
}

pub struct PipelineHandle {
    shared: Arc<Shared>,
    shutdown: Arc<AtomicBool>,
    capture: Option<JoinHandle<(EndReason, usize)>>,
    workers: Vec<JoinHandle<()>>,
    persist: Option<JoinHandle<(u64, u64)>>,
    escalation: Option<JoinHandle<()>>,
    http: Option<HttpServer>,
}

impl PipelineHandle {
    pub fn store(&self) -> &Arc<Store> {
        &self.shared.store
    }

    pub fn metrics(&self) -> LatencyReport {
        self.shared.report()
    }

    pub fn http_addr(&self) -> Option<SocketAddr> {
        self.http.as_ref().map(|h| h.addr())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.shared.events.subscribe()
    }

    /// Flag that stops capture when set; suitable for a signal handler.
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    pub fn request_shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }

    /// Waits for capture to end (end of stream or shutdown), drains the
    /// queue, and stops the remaining threads.
    pub fn wait(mut self) -> RunSummary {
        self.join_stages()
    }

    /// Like [`wait`](Self::wait) but leaves the HTTP interface up until the
    /// handle is dropped.
    pub fn finish(&mut self) -> RunSummary {
        self.join_stages()
    }

    /// Like [`wait`](Self::wait) but keeps serving HTTP until `stop` is set.
    pub fn wait_and_linger(mut self, stop: &AtomicBool) -> RunSummary {
        let summary = self.join_stages();
        if self.http.is_some() {
            info!("run finished; HTTP interface stays up until shutdown");
            while !stop.load(Ordering::SeqCst) {
                thread::sleep(Duration::from_millis(100));
            }
        }
        summary
    }

    fn join_stages(&mut self) -> RunSummary {
        let (end, residual) = self
            .capture
            .take()
            .map(|h| h.join().expect("capture thread panicked"))
            .unwrap_or((EndReason::Shutdown, 0));
        for w in self.workers.drain(..) {
            w.join().expect("analysis thread panicked");
        }
        let (alerts, errors) = self
            .persist
            .take()
            .map(|h| h.join().expect("persist thread panicked"))
            .unwrap_or((0, 0));
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.escalation.take() {
            h.join().expect("escalation thread panicked");
        }
        self.shared.running.store(false, Ordering::SeqCst);
        let report = self.shared.report();
        info!(
            cycles = report.cycles_completed,
            alerts,
            dropped = report.dropped_batches,
            end = ?end,
            "pipeline finished"
        );
        RunSummary {
            end,
            cycles: report.cycles_completed,
            alerts,
            errors,
            dropped_batches: report.dropped_batches,
            residual_frames: residual,
            report,
        }
    }
}

impl Drop for PipelineHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.http.take() {
            h.stop();
        }
    }
}

fn capture_loop(
    mut source: FrameSource,
    config: &PipelineConfig,
    shared: &Shared,
    shutdown: &AtomicBool,
    tx: Sender<Msg>,
) -> (EndReason, usize) {
    let mut batcher = Batcher::new(config.pipeline.batch_size);
    let inject = Duration::from_millis(config.pipeline.inject_capture_ms);
    let budget = config.pipeline.budgets_ms.capture as f64;
    let mut work = Duration::ZERO;
    let mut failures = 0;
    let end = loop {
        if shutdown.load(Ordering::SeqCst) {
            break EndReason::Shutdown;
        }
        let frame = match source.next_frame() {
            Ok(frame) => {
                failures = 0;
                frame
            }
            Err(IngestError::EndOfStream) => break EndReason::EndOfStream,
            Err(e @ (IngestError::UnsupportedFormat(_) | IngestError::FrameTooSmall { .. })) => {
                warn!(error = %e, "skipping unusable frame");
                continue;
            }
            Err(e) => {
                failures += 1;
                if failures > SOURCE_RETRY_LIMIT {
                    error!(error = %e, "source failed repeatedly; stopping capture");
                    break EndReason::SourceFailed(e.to_string());
                }
                warn!(error = %e, attempt = failures, "source error; retrying");
                thread::sleep(Duration::from_secs_f64(1.0 / source.cadence_hz()));
                continue;
            }
        };
        shared.metrics.record_frame(Instant::now());
        let t = Instant::now();
        let frame = preprocess(&frame, &config.source.preprocess);
        work += source.last_acquire_time() + t.elapsed();

        if let Some(batch) = batcher.push(frame) {
            if !inject.is_zero() {
                thread::sleep(inject);
            }
            let capture_ms = (work + inject).as_secs_f64() * 1000.0;
            work = Duration::ZERO;
            if capture_ms > budget {
                shared.metrics.record_overrun();
                warn!(batch = %batch.batch_id(), capture_ms, budget, "capture over budget");
            }
            debug!(batch = %batch.batch_id(), "batch assembled");
            if let Some(old) = shared.queue.push(Job { batch, capture_ms }) {
                let id = old.batch.batch_id();
                shared.metrics.record_drop(id);
                warn!(batch = %id, "analysis behind; dropped oldest queued batch");
                let _ = tx.send(Msg::Dropped(id));
            }
        }
    };
    let residual = batcher.residual();
    if residual > 0 {
        info!(frames = residual, "discarding incomplete final batch");
    }
    shared.queue.close();
    (end, residual)
}

fn analysis_loop(workflow: &Workflow, shared: &Shared, tx: Sender<Msg>) {
    while let Some(job) = shared.queue.pop() {
        let policy = shared
            .policy
            .with_alert_threshold(shared.store.threshold().alert_threshold);
        let result = workflow.analyze(&job.batch, &policy);
        if tx.send(Msg::Analyzed(job, Box::new(result))).is_err() {
            break;
        }
    }
}

/// Emits analyzed cycles in batch order; dropped ids fill their gaps.
fn persist_loop(rx: Receiver<Msg>, config: &PipelineConfig, shared: &Shared, esc: Sender<Pending>) -> (u64, u64) {
    let mut next = 1u64;
    let mut parked: BTreeMap<u64, Option<(Job, Box<Result<CycleAnalysis, CycleFailure>>)>> = BTreeMap::new();
    let (mut alerts, mut errors) = (0, 0);
    let mut handle = |entry: Option<(Job, Box<Result<CycleAnalysis, CycleFailure>>)>| {
        if let Some((job, result)) = entry {
            let (alerted, failed) = persist_cycle(job, *result, config, shared, &esc);
            alerts += alerted as u64;
            errors += failed as u64;
        }
    };
    for msg in rx {
        let (id, entry) = match msg {
            Msg::Analyzed(job, result) => (job.batch.batch_id().0, Some((job, result))),
            Msg::Dropped(id) => (id.0, None),
        };
        parked.insert(id, entry);
        while let Some(entry) = parked.remove(&next) {
            handle(entry);
            next += 1;
        }
    }
    // only reachable with gaps if a stage died; keep order anyway
    for (_, entry) in std::mem::take(&mut parked) {
        handle(entry);
    }
    (alerts, errors)
}

fn persist_cycle(
    job: Job,
    result: Result<CycleAnalysis, CycleFailure>,
    config: &PipelineConfig,
    shared: &Shared,
    esc: &Sender<Pending>,
) -> (bool, bool) {
    let batch = &job.batch;
    let mut incident = Incident::draft(
        batch.batch_id(),
        batch.frames()[0].source_id.clone(),
        (batch.window_start(), batch.window_end()),
    );
    let budgets = config.pipeline.budgets_ms;
    let timing = match result {
        Ok(a) => {
            let debated = a.transcript.is_some();
            let timing = CycleTiming::new(
                batch.batch_id(),
                job.capture_ms,
                a.caption_ms as f64,
                a.analysis_ms as f64,
                a.debate_ms as f64,
                debated,
            );
            let analysis_budget = budgets.analysis + if debated { budgets.debate_extra } else { 0 };
            for (stage, ms, budget) in [
                ("caption", a.caption_ms, budgets.caption),
                ("analysis", a.analysis_ms, analysis_budget),
            ] {
                if ms > budget {
                    shared.metrics.record_overrun();
                    warn!(batch = %batch.batch_id(), stage, ms, budget, "stage over budget");
                }
            }
            incident.caption_seq = Some(a.captions);
            incident.assessment_initial = Some(a.initial);
            incident.transcript = a.transcript;
            incident.decision = Some(a.decision);
            timing
        }
        Err(f) => {
            warn!(batch = %batch.batch_id(), stage = ?f.stage, error = %f.error, "analysis failed");
            let mut timing = CycleTiming::new(
                batch.batch_id(),
                job.capture_ms,
                f.caption_ms as f64,
                f.analysis_ms as f64,
                0.0,
                false,
            );
            timing.failed = true;
            incident.caption_seq = f.captions;
            incident.assessment_initial = f.initial;
            incident.error = Some(CycleError {
                stage: serde_json::to_value(f.stage)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                message: f.error.to_string(),
            });
            timing
        }
    };
    incident.stage_latencies_ms = BTreeMap::from([
        ("capture".to_string(), timing.capture_ms),
        ("caption".to_string(), timing.caption_ms),
        ("analysis".to_string(), timing.analysis_ms),
        ("debate".to_string(), timing.debate_ms),
        ("total".to_string(), timing.total_ms),
    ]);
    let failed = timing.failed;
    shared.metrics.record_cycle(timing);

    let stored = match shared.store.record_cycle(incident, Some(batch)) {
        Ok(s) => s,
        Err(e) => {
            error!(batch = %batch.batch_id(), error = %e, "could not persist cycle");
            return (false, true);
        }
    };
    info!(
        incident = %stored.incident_id,
        batch = %stored.batch_id,
        verdict = ?stored.decision.as_ref().map(|d| d.verdict),
        "cycle persisted"
    );
    shared.publish("incident", serde_json::to_value(stored.summary()).unwrap_or_default());

    let Some(decision) = stored.decision.as_ref().filter(|d| d.verdict == Verdict::Alert) else {
        return (false, failed);
    };
    let alert = match compose_alert(decision, &stored, &config.site, shared.store.root(), Utc::now()) {
        Ok(a) => a,
        Err(e) => {
            error!(incident = %stored.incident_id, error = %e, "could not compose alert");
            return (true, failed);
        }
    };
    shared.publish("alert", serde_json::to_value(&alert).unwrap_or_default());
    let policy = config.escalation_policy();
    let sent_at = Instant::now();
    for action in plan_escalation(alert.risk, &policy, AckState::default()) {
        let channels = resolve_channels(config, &action.channels);
        if action.at_s == 0.0 {
            deliver(shared, config, &stored.incident_id, &alert, &channels, action.tier);
        } else {
            let _ = esc.send(Pending {
                due: sent_at + Duration::from_secs_f64(action.at_s),
                at_s: action.at_s,
                tier: action.tier,
                incident_id: stored.incident_id.clone(),
                alert: alert.clone(),
                channels,
            });
        }
    }
    (true, failed)
}

fn resolve_channels(config: &PipelineConfig, names: &[String]) -> Vec<ChannelConfig> {
    names
        .iter()
        .filter_map(|n| config.channels.get(n))
        .filter(|c| c.enabled)
        .cloned()
        .collect()
}

fn deliver(shared: &Shared, config: &PipelineConfig, incident_id: &str, alert: &Alert, channels: &[ChannelConfig], tier: usize) {
    let report: Option<DeliveryReport> =
        match dispatch(alert, channels, shared.store.as_ref(), config.dispatch.retry()) {
            Ok(report) => Some(report),
            Err(AlertError::AllChannelsFailed { report }) => {
                error!(alert = %alert.alert_id, tier, "every channel failed");
                Some(report)
            }
            Err(AlertError::NoChannels) => {
                warn!(alert = %alert.alert_id, tier, "no enabled channels for tier");
                None
            }
            Err(e) => {
                error!(alert = %alert.alert_id, tier, error = %e, "dispatch failed");
                None
            }
        };
    if let Some(report) = report {
        if let Err(e) = shared.store.record_delivery(incident_id, report) {
            error!(incident = incident_id, error = %e, "could not persist delivery report");
        }
    }
}

fn escalation_loop(rx: Receiver<Pending>, config: &PipelineConfig, shared: &Shared, shutdown: &AtomicBool) {
    let mut pending: Vec<Pending> = Vec::new();
    let mut fired: BTreeSet<(String, usize)> = BTreeSet::new();
    loop {
        let now = Instant::now();
        let (due, rest): (Vec<Pending>, Vec<Pending>) = pending.into_iter().partition(|p| p.due <= now);
        pending = rest;
        for p in due {
            let acked = shared
                .store
                .get(&p.incident_id)
                .and_then(|i| i.acked_at)
                .map(|at| (at - p.alert.created_at).num_milliseconds() as f64 / 1000.0);
            if acked.is_some_and(|a| a < p.at_s) {
                info!(incident = %p.incident_id, tier = p.tier, "acknowledged; escalation stopped");
                continue;
            }
            if fired.insert((p.incident_id.clone(), p.tier)) {
                info!(incident = %p.incident_id, tier = p.tier, "escalating unacknowledged alert");
                deliver(shared, config, &p.incident_id, &p.alert, &p.channels, p.tier);
            }
        }
        if shutdown.load(Ordering::SeqCst) {
            for p in &pending {
                info!(incident = %p.incident_id, tier = p.tier, "pending escalation abandoned at shutdown");
            }
            return;
        }
        let wait = pending
            .iter()
            .map(|p| p.due.saturating_duration_since(Instant::now()))
            .min()
            .unwrap_or(Duration::from_millis(200))
            .min(Duration::from_millis(200));
        match rx.recv_timeout(wait) {
            Ok(p) => pending.push(p),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => {
                // persist has exited, so nothing new can arrive
                if pending.is_empty() {
                    return;
                }
                thread::sleep(wait);
            }
        }
    }
}
