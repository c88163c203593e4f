use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::replay::ReplayOverrides;
use super::ScenarioCategory;

pub const EVAL_SCHEMA: &str = "eval/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FN")]
    FalseNegative,
    #[serde(rename = "FP")]
    FalsePositive,
    #[serde(rename = "TN")]
    TrueNegative,
}

impl Classification {
    pub fn of(expected: bool, actual: bool) -> Self {
        match (expected, actual) {
            (true, true) => Self::TruePositive,
            (true, false) => Self::FalseNegative,
            (false, true) => Self::FalsePositive,
            (false, false) => Self::TrueNegative,
        }
    }

    pub fn is_correct(self) -> bool {
        matches!(self, Self::TruePositive | Self::TrueNegative)
    }
}

/// Result of replaying one scenario. Contains nothing timing-dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub file: String,
    pub category: ScenarioCategory,
    pub expected_alert: bool,
    pub actual_alert: bool,
    pub classification: Classification,
    /// Highest alert confidence when alerted, else the highest decision confidence.
    pub confidence: Option<f64>,
    /// Final assessment label of the deciding cycle.
    pub final_label: Option<String>,
    /// Lowest confidence among this scenario's alerts.
    pub min_alert_confidence: Option<f64>,
    pub debate_rounds: u32,
    pub cycles: u64,
    pub alerts: u64,
    /// Startup failure or a cycle error marker; counted as a failure.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub scenarios: usize,
    /// Abduction scenarios: the TPR denominator.
    pub positives: usize,
    /// Normal plus edge-case scenarios: the FPR denominator.
    pub negatives: usize,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub errors: usize,
    /// `None` (serialized as null) when there are no positives.
    pub true_positive_rate: Option<f64>,
    /// `None` when there are no negatives.
    pub false_positive_rate: Option<f64>,
    pub min_alert_confidence: Option<f64>,
}

impl Aggregates {
    pub fn from_outcomes(outcomes: &[ScenarioOutcome]) -> Self {
        let count = |c: Classification| outcomes.iter().filter(|o| o.classification == c).count();
        let (tp, fn_, fp, tn) = (
            count(Classification::TruePositive),
            count(Classification::FalseNegative),
            count(Classification::FalsePositive),
            count(Classification::TrueNegative),
        );
        let positives = outcomes
            .iter()
            .filter(|o| o.category == ScenarioCategory::Abduction)
            .count();
        let negatives = outcomes.len() - positives;
        let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        // positives/negatives follow the category, tp/fp follow ground truth;
        // edge cases expecting an alert count as positives for the rates
        let expected_pos = tp + fn_;
        let expected_neg = fp + tn;
        Self {
            scenarios: outcomes.len(),
            positives,
            negatives,
            tp,
            fn_,
            fp,
            tn,
            errors: outcomes.iter().filter(|o| o.error.is_some()).count(),
            true_positive_rate: rate(tp, expected_pos),
            false_positive_rate: rate(fp, expected_neg),
            min_alert_confidence: outcomes
                .iter()
                .filter_map(|o| o.min_alert_confidence)
                .reduce(f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTiming {
    pub name: String,
    pub mean_cycle_ms: Option<f64>,
    pub wall_ms: f64,
}

/// Wall-clock figures. Excluded from the deterministic form of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub generated_at: chrono::DateTime<chrono::Utc>,
    pub total_wall_ms: f64,
    pub cycles: usize,
    pub mean_cycle_ms: Option<f64>,
    pub p50_cycle_ms: Option<f64>,
    pub p95_cycle_ms: Option<f64>,
    pub mean_cycle_ms_debated: Option<f64>,
    pub mean_cycle_ms_plain: Option<f64>,
    pub scenarios: Vec<ScenarioTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: String,
    pub actual: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl Comparison {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub overrides: ReplayOverrides,
    pub scenarios: Vec<ScenarioOutcome>,
    pub aggregates: Aggregates,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSummary>,
}

impl EvalReport {
    pub fn new(overrides: ReplayOverrides, scenarios: Vec<ScenarioOutcome>, timing: Option<TimingSummary>) -> Self {
        Self {
            schema: EVAL_SCHEMA.into(),
            overrides,
            aggregates: Aggregates::from_outcomes(&scenarios),
            scenarios,
            comparison: None,
            timing,
        }
    }

    /// The report without wall-clock data; identical across repeated runs.
    pub fn deterministic_json(&self) -> String {
        let stripped = Self {
            timing: None,
            ..self.clone()
        };
        serde_json::to_string_pretty(&stripped).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Pass/fail bounds for [`compare_to_reference`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBounds {
    pub min_tpr: f64,
    pub max_fpr: f64,
    /// Inclusive band for the median cycle time, when checked.
    pub latency_p50_ms: Option<(f64, f64)>,
    /// False skips the TPR and FPR checks, for suites that only measure timing.
    #[serde(default = "yes")]
    pub check_rates: bool,
}

fn yes() -> bool {
    true
}

impl Default for ReferenceBounds {
    fn default() -> Self {
        Self {
            min_tpr: 0.9,
            max_fpr: 0.1,
            latency_p50_ms: None,
            check_rates: true,
        }
    }
}

fn show(rate: Option<f64>) -> String {
    rate.map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"))
}

/// Checks a report against bounds. Undefined rates fail, as do scenario errors.
pub fn compare_to_reference(report: &EvalReport, bounds: &ReferenceBounds) -> Comparison {
    let a = &report.aggregates;
    let mut checks = Vec::new();
    if bounds.check_rates {
        let tpr_note = if a.true_positive_rate.is_none() { " (no abduction scenarios)" } else { "" };
        checks.push(Check {
            name: "true_positive_rate".into(),
            expected: format!(">= {:.4}", bounds.min_tpr),
            actual: format!("{}{tpr_note}", show(a.true_positive_rate)),
            passed: a.true_positive_rate.is_some_and(|r| r >= bounds.min_tpr),
        });
        let fpr_note = if a.false_positive_rate.is_none() { " (no normal or edge-case scenarios)" } else { "" };
        checks.push(Check {
            name: "false_positive_rate".into(),
            expected: format!("<= {:.4}", bounds.max_fpr),
            actual: format!("{}{fpr_note}", show(a.false_positive_rate)),
            passed: a.false_positive_rate.is_some_and(|r| r <= bounds.max_fpr),
        });
    }
    checks.push(Check {
        name: "scenario_errors".into(),
        expected: "0".into(),
        actual: a.errors.to_string(),
        passed: a.errors == 0,
    });
    if let Some((lo, hi)) = bounds.latency_p50_ms {
        let p50 = report.timing.as_ref().and_then(|t| t.p50_cycle_ms);
        checks.push(Check {
            name: "latency_p50_ms".into(),
            expected: format!("[{lo:.0}, {hi:.0}]"),
            actual: p50.map_or_else(|| "n/a (no timed cycles)".into(), |v| format!("{v:.1}")),
            passed: p50.is_some_and(|v| (lo..=hi).contains(&v)),
        });
    }
    Comparison {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && !matches!(c, '\n' | '\t' | '\r') => {}
            c => out.push(c),
        }
    }
    out
}

/// JUnit XML: one test case per scenario, plus one per reference check.
pub fn junit_xml(report: &EvalReport) -> String {
    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<testsuites>\n");
    let failed = report
        .scenarios
        .iter()
        .filter(|o| !o.classification.is_correct() || o.error.is_some())
        .count();
    let _ = writeln!(
        xml,
        "  <testsuite name=\"scenarios\" tests=\"{}\" failures=\"{failed}\">",
        report.scenarios.len()
    );
    for o in &report.scenarios {
        let _ = write!(xml, "    <testcase classname=\"scenarios\" name=\"{}\"", escape(&o.name));
        if let Some(err) = &o.error {
            let _ = writeln!(xml, ">\n      <failure message=\"error\">{}</failure>\n    </testcase>", escape(err));
        } else if !o.classification.is_correct() {
            let _ = writeln!(
                xml,
                ">\n      <failure message=\"{}\">expected alert={} actual alert={} confidence={}</failure>\n    </testcase>",
                escape(&format!("{:?}", o.classification)),
                o.expected_alert,
                o.actual_alert,
                o.confidence.map_or("n/a".into(), |c| format!("{c:.2}")),
            );
        } else {
            xml.push_str("/>\n");
        }
    }
    xml.push_str("  </testsuite>\n");
    if let Some(cmp) = &report.comparison {
        let _ = writeln!(
            xml,
            "  <testsuite name=\"reference\" tests=\"{}\" failures=\"{}\">",
            cmp.checks.len(),
            cmp.failures().count()
        );
        for c in &cmp.checks {
            let _ = write!(xml, "    <testcase classname=\"reference\" name=\"{}\"", escape(&c.name));
            if c.passed {
                xml.push_str("/>\n");
            } else {
                let _ = writeln!(
                    xml,
                    ">\n      <failure message=\"out of bounds\">expected {} got {}</failure>\n    </testcase>",
                    escape(&c.expected),
                    escape(&c.actual)
                );
            }
        }
        xml.push_str("  </testsuite>\n");
    }
    xml.push_str("</testsuites>\n");
    xml
}
