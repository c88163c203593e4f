//! Paced 10 Hz capture into a stalled analyzer, compared against a queue simulation.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use childwatch::agents::Workflow;
use childwatch::gateway::{Backend, GatewayError, ModelRequest, ModelResponse, PromptPack, ScriptedBackend};
use childwatch::pipeline::{LatencyReport, Pipeline, RunSummary};

use super::{benign_script, Fixture};

pub const FRAMES: u64 = 30;
pub const BATCH: usize = 2;
pub const CAPACITY: usize = 3;

/// Holds every request of batch 1 until the gate opens.
struct Gated {
    inner: ScriptedBackend,
    open: Arc<AtomicBool>,
}

impl Backend for Gated {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn complete(&self, r: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        if r.batch == Some(1) {
            while !self.open.load(Ordering::SeqCst) {
                std::thread::sleep(Duration::from_millis(5));
            }
        }
        self.inner.complete(r)
    }
}

/// One busy worker holding the first batch; every later batch is pushed into
/// a bounded queue that evicts its front. Returns (analyzed, dropped) ids.
pub fn simulate(batches: u64, capacity: usize) -> (Vec<u64>, Vec<u64>) {
    let mut queue = VecDeque::new();
    let mut dropped = Vec::new();
    for id in 2..=batches {
        if queue.len() == capacity {
            dropped.push(queue.pop_front().unwrap());
        }
        queue.push_back(id);
    }
    let mut analyzed = vec![1];
    analyzed.extend(queue);
    (analyzed, dropped)
}

pub struct Outcome {
    pub summary: RunSummary,
    /// Metrics taken when capture finished, before the gate opened.
    pub at_capture_end: LatencyReport,
    pub persisted: Vec<u64>,
}

pub fn run() -> Outcome {
    let fx = Fixture::new(FRAMES, &benign_script(FRAMES));
    let mut config = fx.config.clone();
    config.source.pace = true;
    config.source.cadence_hz = 10.0;
    config.pipeline.batch_size = BATCH;
    config.pipeline.queue_capacity = CAPACITY;
    config.pipeline.workers = 1;

    let open = Arc::new(AtomicBool::new(false));
    let backend: Arc<dyn Backend> = Arc::new(Gated {
        inner: ScriptedBackend::from_file(&fx.path("script.json")).unwrap(),
        open: open.clone(),
    });
    let workflow = Workflow::new(backend.clone(), backend, PromptPack::default());
    let handle = Pipeline::start_with(config, workflow).unwrap();

    let deadline = Instant::now() + Duration::from_secs(20);
    let at_capture_end = loop {
        let m = handle.metrics();
        if m.capture.frames == FRAMES && m.dropped_batches as usize + CAPACITY + 1 >= (FRAMES as usize / BATCH) {
            break m;
        }
        assert!(Instant::now() < deadline, "capture did not finish");
        std::thread::sleep(Duration::from_millis(20));
    };
    open.store(true, Ordering::SeqCst);
    let store = handle.store().clone();
    let summary = handle.wait();
    let persisted = store.incidents().iter().map(|i| i.batch_id.0).collect();
    Outcome {
        summary,
        at_capture_end,
        persisted,
    }
}
