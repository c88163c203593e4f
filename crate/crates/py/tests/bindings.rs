//! Drives the module through an embedded interpreter.

use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str, setup: impl FnOnce(&Bound<'_, PyDict>)) {
    Python::attach(|py| {
        let locals = PyDict::new(py);
        locals.set_item("cw", pyo3::wrap_pymodule!(pychildwatch::pychildwatch)(py)).unwrap();
        setup(&locals);
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, None, Some(&locals)) {
            e.display(py);
            panic!("python raised {e}");
        }
    });
}

#[test]
fn assessments_and_policy() {
    run(
        r#"
a = cw.ThreatAssessment.from_reply('```json\n{"label":"abduction","confidence":0.85,"rationale":"r","cues":["pulled"]}\n```')
assert a.label == "abduction" and a.confidence == 0.85
p = cw.Policy()
assert not p.should_debate(a)
assert cw.Policy().decide(a)["verdict"] == "alert"
assert cw.Policy(alert_threshold=0.9).decide(a)["verdict"] == "no_alert"
assert cw.Policy().should_debate(cw.ThreatAssessment("suspicious", 0.5))
try:
    cw.ThreatAssessment("abduction", 0.9)
    raise SystemExit("cue-less abduction accepted")
except ValueError:
    pass
try:
    cw.Policy(alert_threshold=0.3)
    raise SystemExit("threshold below the band accepted")
except ValueError:
    pass
assert cw.adapt_threshold(0.80, "confirmed_false") == 0.81
"#,
        |_| {},
    );
}

#[test]
fn store_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let suite = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/reference");
    run(
        r#"
report = cw.replay_suite(suite, parallel=4)
agg = report["aggregates"]
assert (agg["tp"], agg["fn"], agg["fp"], agg["tn"]) == (9, 1, 2, 18), agg
assert report["comparison"]["passed"]
s = cw.Store(root)
assert len(s) == 0 and s.threshold == 0.8 and s.recovery is None
"#,
        |l| {
            l.set_item("suite", suite).unwrap();
            l.set_item("root", dir.path()).unwrap();
        },
    );
}
