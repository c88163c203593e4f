//! The running daemon: capture → analysis → persist/deliver stages joined by
//! bounded queues, plus latency metrics and the HTTP interface.

mod config;
mod http;
mod metrics;
mod queue;
mod run;

use std::net::SocketAddr;

use thiserror::Error;

use crate::ingest::IngestError;
use crate::store::StoreError;

pub use config::{
    BackendSection, DispatchSection, HttpSection, PipelineConfig, PipelineSection, StageBudgets,
    StoreSection,
};
pub use http::{AckBody, FeedbackBody, HttpServer, PolicyView};
pub use metrics::{
    percentile, CaptureStats, CycleTiming, LatencyReport, Metrics, Percentiles, ResourceStats,
    StagePercentiles, METRICS_WINDOW,
};
pub use queue::DropOldestQueue;
pub use run::{EndReason, Pipeline, PipelineHandle, RunSummary, StreamEvent};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("fatal config: {0}")]
    FatalConfig(String),
    #[error("port in use: {0}")]
    PortInUse(SocketAddr),
    #[error(transparent)]
    Source(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
