//! Scenario replay: labeled scripted scenarios run through the full pipeline,
//! scored for detection rate, false-positive rate, and cycle latency.

mod replay;
mod report;
mod scenario;

use thiserror::Error;

pub use replay::{replay, replay_scenario, scenario_config, ReplayOverrides};
pub use report::{
    compare_to_reference, junit_xml, Aggregates, Check, Classification, Comparison, EvalReport,
    ReferenceBounds, ScenarioOutcome, ScenarioTiming, TimingSummary, EVAL_SCHEMA,
};
pub use scenario::{
    load_scenario, load_suite, materialize_frames, parse_scenario, placeholder_frame,
    placeholder_tag, FrameSpec, GroundTruth, InjectedDelays, ScenarioCategory, ScenarioScript,
    SCENARIO_SCHEMA,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("schema violation at `{path}`: {reason}")]
    SchemaViolation { path: String, reason: String },
    #[error("io: {0}")]
    Io(String),
}
