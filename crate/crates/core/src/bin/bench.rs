use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use childwatch::bench::{
    compare_to_reference, junit_xml, load_scenario, load_suite, replay, ReferenceBounds,
    ReplayOverrides,
};

#[derive(Parser)]
#[command(name = "bench", about = "Replay labeled scenarios and score the detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay every scenario in a directory and check the reference bounds.
    Run {
        #[arg(long)]
        suite: PathBuf,
        /// Write the full JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        junit: Option<PathBuf>,
        #[arg(long)]
        alert_threshold: Option<f64>,
        #[arg(long)]
        max_debate_rounds: Option<u32>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 0.9)]
        min_tpr: f64,
        #[arg(long, default_value_t = 0.1)]
        max_fpr: f64,
        /// Median cycle-time band, e.g. `6300:7700`.
        #[arg(long, value_parser = parse_band)]
        latency_p50_ms: Option<(f64, f64)>,
        /// Skip the TPR and FPR checks; for timing-only suites.
        #[arg(long)]
        latency_only: bool,
        /// Scenarios replayed at once.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Check a scenario file against the schema.
    Validate { file: PathBuf },
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LOW:HIGH")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err("LOW must not exceed HIGH".into());
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Validate { file } => match load_scenario(&file) {
            Ok(s) => {
                println!(
                    "ok: {} ({:?}, {} frames, {} batches)",
                    s.name,
                    s.category,
                    s.frames.len(),
                    s.batches()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{}: {e}", file.display());
                ExitCode::FAILURE
            }
        },
        Command::Run {
            suite,
            report,
            junit,
            alert_threshold,
            max_debate_rounds,
            workers,
            min_tpr,
            max_fpr,
            latency_p50_ms,
            latency_only,
            parallel,
        } => {
            let scenarios = match load_suite(&suite) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::FAILURE;
                }
            };
            let overrides = ReplayOverrides {
                alert_threshold,
                max_debate_rounds,
                workers,
                parallel,
            };
            let mut result = replay(&scenarios, &overrides);
            let bounds = ReferenceBounds {
                min_tpr,
                max_fpr,
                latency_p50_ms,
                check_rates: !latency_only,
            };
            let cmp = compare_to_reference(&result, &bounds);
            result.comparison = Some(cmp.clone());

            for o in &result.scenarios {
                println!(
                    "{:<4} {:<40} expected={:<5} actual={:<5} confidence={} rounds={}{}",
                    format!("{:?}", o.classification).chars().filter(|c| c.is_uppercase()).collect::<String>(),
                    o.name,
                    o.expected_alert,
                    o.actual_alert,
                    o.confidence.map_or("n/a".into(), |c| format!("{c:.2}")),
                    o.debate_rounds,
                    o.error.as_ref().map_or(String::new(), |e| format!(" error: {e}")),
                );
            }
            let a = &result.aggregates;
            println!(
                "TP={} FN={} FP={} TN={} errors={} TPR={} FPR={}",
                a.tp,
                a.fn_,
                a.fp,
                a.tn,
                a.errors,
                a.true_positive_rate.map_or("n/a".into(), |r| format!("{}/{} ({r:.3})", a.tp, a.tp + a.fn_)),
                a.false_positive_rate.map_or("n/a".into(), |r| format!("{}/{} ({r:.3})", a.fp, a.fp + a.tn)),
            );
            if let Some(t) = &result.timing {
                println!(
                    "cycles={} p50={} mean={} wall={:.0} ms",
                    t.cycles,
                    t.p50_cycle_ms.map_or("n/a".into(), |v| format!("{v:.0} ms")),
                    t.mean_cycle_ms.map_or("n/a".into(), |v| format!("{v:.0} ms")),
                    t.total_wall_ms
                );
            }
            for c in &cmp.checks {
                println!(
                    "{} {}: expected {}, got {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.expected,
                    c.actual
                );
            }
            if let Some(path) = report {
                if let Err(e) = std::fs::write(&path, result.to_json()) {
                    eprintln!("{}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            if let Some(path) = junit {
                if let Err(e) = std::fs::write(&path, junit_xml(&result)) {
                    eprintln!("{}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            if cmp.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
