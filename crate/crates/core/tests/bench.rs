//! Scenario replay: the reference suite, determinism, the boundary file, and the CLIs.

use std::path::PathBuf;
use std::process::Command;

use childwatch::bench::{
    compare_to_reference, load_scenario, load_suite, replay, replay_scenario, Classification, ReferenceBounds,
    ReplayOverrides,
};

fn scenarios(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(rel)
}

fn parallel(n: usize) -> ReplayOverrides {
    ReplayOverrides {
        parallel: n,
        ..ReplayOverrides::default()
    }
}

#[test]
fn reference_suite_scores_nine_of_ten_and_two_of_twenty() {
    let suite = load_suite(&scenarios("reference")).unwrap();
    assert_eq!(suite.len(), 30);
    let report = replay(&suite, &parallel(8));
    let a = &report.aggregates;
    assert_eq!((a.tp, a.fn_, a.fp, a.tn, a.errors), (9, 1, 2, 18, 0));
    assert_eq!(a.true_positive_rate, Some(0.9));
    assert_eq!(a.false_positive_rate, Some(0.1));
    assert!(a.min_alert_confidence.unwrap() >= 0.80);

    let wrong: Vec<(&str, Classification)> = report
        .scenarios
        .iter()
        .filter(|s| !s.classification.is_correct())
        .map(|s| (s.file.as_str(), s.classification))
        .collect();
    assert_eq!(wrong.len(), 3);
    assert!(wrong.iter().all(|(n, c)| match c {
        Classification::FalseNegative => n.starts_with("a10"),
        Classification::FalsePositive => n.starts_with("e01") || n.starts_with("e02"),
        _ => false,
    }), "{wrong:?}");

    let cmp = compare_to_reference(&report, &ReferenceBounds::default());
    assert!(cmp.passed, "{cmp:?}");
}

#[test]
fn reports_are_identical_apart_from_timing() {
    let suite = load_suite(&scenarios("reference")).unwrap();
    let sequential = replay(&suite[..12], &parallel(1));
    let concurrent = replay(&suite[..12], &parallel(6));
    assert_eq!(sequential.deterministic_json(), concurrent.deterministic_json());
    assert!(sequential.timing.is_some());
    assert!(!sequential.deterministic_json().contains("\"timing\""));
}

#[test]
fn boundary_scenario_follows_the_threshold() {
    let s = load_scenario(&scenarios("boundary/boundary_079.json")).unwrap();
    let default = replay_scenario(&s, &ReplayOverrides::default());
    assert_eq!(default.classification, Classification::FalseNegative);
    assert_eq!(default.debate_rounds, 3);
    assert_eq!(default.error, None);

    let lowered = ReplayOverrides {
        alert_threshold: Some(0.70),
        ..ReplayOverrides::default()
    };
    let alerted = replay_scenario(&s, &lowered);
    assert_eq!(alerted.classification, Classification::TruePositive);
    assert_eq!(alerted.confidence, Some(0.79));
}

#[test]
fn fewer_debate_rounds_change_the_outcome() {
    let suite = load_suite(&scenarios("reference")).unwrap();
    let one_round = ReplayOverrides {
        max_debate_rounds: Some(1),
        parallel: 8,
        ..ReplayOverrides::default()
    };
    let report = replay(&suite, &one_round);
    let base = replay(&suite, &parallel(8));
    assert!(report.aggregates.tp <= base.aggregates.tp);
    assert!(report.scenarios.iter().all(|s| s.debate_rounds <= 1));
}

#[test]
fn an_empty_suite_has_undefined_rates_and_fails() {
    let report = replay(&[], &parallel(1));
    assert_eq!(report.aggregates.true_positive_rate, None);
    assert_eq!(report.aggregates.false_positive_rate, None);
    let cmp = compare_to_reference(&report, &ReferenceBounds::default());
    assert!(!cmp.passed);
    assert!(cmp.checks.iter().any(|c| c.actual.starts_with("n/a")));
}

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn bench_cli_exit_code_follows_the_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let junit = dir.path().join("junit.xml");
    let ok = bench()
        .args(["run", "--parallel", "8", "--suite"])
        .arg(scenarios("reference"))
        .arg("--report")
        .arg(&report)
        .arg("--junit")
        .arg(&junit)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(ok.status.success(), "{stdout}");
    assert!(stdout.contains("PASS true_positive_rate"), "{stdout}");
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["schema"], "eval/v1");
    assert_eq!(parsed["comparison"]["passed"], true);
    assert!(std::fs::read_to_string(&junit).unwrap().contains("<testsuites"));

    let strict = bench()
        .args(["run", "--parallel", "8", "--min-tpr", "0.95", "--suite"])
        .arg(scenarios("reference"))
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stdout).contains("FAIL true_positive_rate"));
}

#[test]
fn bench_validate_reports_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let good = bench().arg("validate").arg(scenarios("boundary/boundary_079.json")).output().unwrap();
    assert!(good.status.success());

    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r##"{"schema":"scenario/v1","name":"x","category":"normal","ground_truth":{"alert_expected":false},
            "batch_size":1,"frames":[{"placeholder":"#102030"}],
            "script":{"situation":{"label":"normal","confidence":0.1,"rationale":"","cues":[]}}}"##,
    )
    .unwrap();
    let out = bench().arg("validate").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("script.1"), "{stderr}");
}

#[test]
fn daemon_validates_the_example_config() {
    let example = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config/example.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_childwatchd"))
        .arg("--config")
        .arg(&example)
        .arg("--validate-config")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "[policy]\nalert_threshold = 0.3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_childwatchd"))
        .arg("--config")
        .arg(&broken)
        .arg("--validate-config")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("alert_threshold 0.3"));
}

#[test]
fn daemon_replays_a_scenario_once() {
    let out = Command::new(env!("CARGO_BIN_EXE_childwatchd"))
        .arg("--replay")
        .arg(scenarios("reference/a01_stranger_leads_child_from_swings.json"))
        .arg("--once")
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(summary["alerts"], 1);
}
