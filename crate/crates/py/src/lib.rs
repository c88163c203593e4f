//! Python bindings: assessments, policy decisions, the incident store, and scenario replay.

use std::path::PathBuf;

use childwatch::agents::{decide, parse_assessment, should_debate, AgentPolicy, DebateBand, ThreatLabel};
use childwatch::bench::{compare_to_reference, load_scenario, load_suite, replay, ReferenceBounds, ReplayOverrides};
use childwatch::pipeline::{Pipeline, PipelineConfig};
use childwatch::store::{adapt_threshold as adapt, FeedbackVerdict, OperatorFeedback, StoreOptions};
use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn label(name: &str) -> PyResult<ThreatLabel> {
    match name {
        "normal" => Ok(ThreatLabel::Normal),
        "suspicious" => Ok(ThreatLabel::Suspicious),
        "abduction" => Ok(ThreatLabel::Abduction),
        other => Err(PyValueError::new_err(format!("unknown label {other:?}"))),
    }
}

fn verdict(name: &str) -> PyResult<FeedbackVerdict> {
    match name {
        "confirmed_true" => Ok(FeedbackVerdict::ConfirmedTrue),
        "confirmed_false" => Ok(FeedbackVerdict::ConfirmedFalse),
        other => Err(PyValueError::new_err(format!(
            "verdict must be confirmed_true or confirmed_false, got {other:?}"
        ))),
    }
}

/// A situation assessment: label, confidence in [0, 1], rationale, cues.
#[pyclass(module = "pychildwatch", frozen)]
struct ThreatAssessment(childwatch::agents::ThreatAssessment);

#[pymethods]
impl ThreatAssessment {
    #[new]
    #[pyo3(signature = (label, confidence, rationale = String::new(), cues = Vec::new()))]
    fn new(label: &str, confidence: f64, rationale: String, cues: Vec<String>) -> PyResult<Self> {
        childwatch::agents::ThreatAssessment::new(self::label(label)?, confidence, rationale, cues)
            .map(Self)
            .map_err(PyValueError::new_err)
    }

    /// Parses a model reply (bare JSON or fenced) into an assessment.
    #[staticmethod]
    fn from_reply(text: &str) -> PyResult<Self> {
        parse_assessment(text).map(Self).map_err(PyValueError::new_err)
    }

    #[getter]
    fn label(&self) -> &'static str {
        self.0.label.as_str()
    }

    #[getter]
    fn confidence(&self) -> f64 {
        self.0.confidence
    }

    #[getter]
    fn rationale(&self) -> String {
        self.0.rationale.clone()
    }

    #[getter]
    fn cues(&self) -> Vec<String> {
        self.0.cues.clone()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }

    fn __repr__(&self) -> String {
        format!("ThreatAssessment({})", self.0.brief())
    }
}

/// Alert threshold, debate band, and round limit.
#[pyclass(module = "pychildwatch", frozen)]
struct Policy(AgentPolicy);

#[pymethods]
impl Policy {
    #[new]
    #[pyo3(signature = (alert_threshold = 0.80, debate_low = 0.40, debate_high = 0.80, max_debate_rounds = 3, high_risk_threshold = 0.90))]
    fn new(
        alert_threshold: f64,
        debate_low: f64,
        debate_high: f64,
        max_debate_rounds: u32,
        high_risk_threshold: f64,
    ) -> PyResult<Self> {
        let policy = AgentPolicy {
            alert_threshold,
            debate_band: DebateBand {
                low: debate_low,
                high: debate_high,
            },
            max_debate_rounds,
            high_risk_threshold,
            decision_via_backend: false,
        };
        policy.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self(policy))
    }

    #[getter]
    fn alert_threshold(&self) -> f64 {
        self.0.alert_threshold
    }

    #[getter]
    fn max_debate_rounds(&self) -> u32 {
        self.0.max_debate_rounds
    }

    fn should_debate(&self, assessment: &ThreatAssessment) -> bool {
        should_debate(&assessment.0, &self.0)
    }

    /// Final decision for an assessment, as a dict.
    fn decide<'py>(&self, py: Python<'py>, assessment: &ThreatAssessment) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &decide(&assessment.0, None, &self.0))
    }

    fn __repr__(&self) -> String {
        format!(
            "Policy(alert_threshold={}, debate_band=[{}, {}), max_debate_rounds={})",
            self.0.alert_threshold, self.0.debate_band.low, self.0.debate_band.high, self.0.max_debate_rounds
        )
    }
}

/// One feedback step applied to a threshold.
#[pyfunction]
fn adapt_threshold(current: f64, verdict: &str) -> PyResult<f64> {
    Ok(adapt(current, self::verdict(verdict)?))
}

/// The append-only incident ledger in a directory.
#[pyclass(module = "pychildwatch", frozen)]
struct Store(childwatch::store::Store);

#[pymethods]
impl Store {
    #[new]
    #[pyo3(signature = (root, initial_threshold = 0.80))]
    fn new(root: PathBuf, initial_threshold: f64) -> PyResult<Self> {
        childwatch::store::Store::open(root, StoreOptions::new(initial_threshold))
            .map(Self)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn incidents<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.incidents())
    }

    fn get<'py>(&self, py: Python<'py>, incident_id: &str) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.0.get(incident_id).map(|i| to_py(py, &i)).transpose()
    }

    fn ack<'py>(&self, py: Python<'py>, incident_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let incident = self
            .0
            .record_ack(incident_id, chrono::Utc::now())
            .map_err(|e| PyKeyError::new_err(e.to_string()))?;
        to_py(py, &incident)
    }

    /// Records operator feedback on an alert and returns the new threshold.
    #[pyo3(signature = (incident_id, verdict, operator_id, note = None))]
    fn feedback(&self, incident_id: &str, verdict: &str, operator_id: String, note: Option<String>) -> PyResult<f64> {
        let feedback = OperatorFeedback {
            verdict: self::verdict(verdict)?,
            operator_id,
            submitted_at: chrono::Utc::now(),
            note,
        };
        self.0
            .append_feedback(incident_id, feedback)
            .map(|t| t.alert_threshold)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.0.threshold().alert_threshold
    }

    /// `(line, quarantined_bytes)` when the last open quarantined a torn record.
    #[getter]
    fn recovery(&self) -> Option<(usize, usize)> {
        self.0.recovery().map(|r| (r.line, r.quarantined_bytes))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Validates a scenario file; returns its name, category, batches, and expected outcome.
#[pyfunction]
fn validate_scenario<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let s = load_scenario(&path).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(
        py,
        &serde_json::json!({
            "name": s.name,
            "category": s.category,
            "batches": s.batches(),
            "alert_expected": s.ground_truth.alert_expected,
        }),
    )
}

/// Replays every scenario in a directory and returns the scored report.
#[pyfunction]
#[pyo3(signature = (suite, alert_threshold = None, max_debate_rounds = None, parallel = 1, min_tpr = 0.9, max_fpr = 0.1))]
fn replay_suite<'py>(
    py: Python<'py>,
    suite: PathBuf,
    alert_threshold: Option<f64>,
    max_debate_rounds: Option<u32>,
    parallel: usize,
    min_tpr: f64,
    max_fpr: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let scenarios = load_suite(&suite).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let overrides = ReplayOverrides {
        alert_threshold,
        max_debate_rounds,
        workers: None,
        parallel,
    };
    let mut report = py.detach(|| replay(&scenarios, &overrides));
    let bounds = ReferenceBounds {
        min_tpr,
        max_fpr,
        latency_p50_ms: None,
        check_rates: true,
    };
    report.comparison = Some(compare_to_reference(&report, &bounds));
    to_py(py, &report)
}

/// Runs the pipeline from a config file to the end of its source.
#[pyfunction]
fn run_once<'py>(py: Python<'py>, config: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let config = PipelineConfig::load(&config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let summary = py
        .detach(|| Pipeline::run_once(config))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &summary)
}

#[pymodule]
pub fn pychildwatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<ThreatAssessment>()?;
    m.add_class::<Policy>()?;
    m.add_class::<Store>()?;
    m.add_function(wrap_pyfunction!(adapt_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(replay_suite, m)?)?;
    m.add_function(wrap_pyfunction!(run_once, m)?)?;
    Ok(())
}
