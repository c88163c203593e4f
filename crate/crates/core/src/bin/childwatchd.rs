use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;
use tracing::{error, info};
use tracing_subscriber::EnvFilter;

use childwatch::bench::{load_scenario, scenario_config, ReplayOverrides};
use childwatch::pipeline::{EndReason, HttpSection, Pipeline, PipelineConfig, RunSummary};

#[derive(Parser)]
#[command(name = "childwatchd", about = "Camera-stream abduction detector daemon")]
struct Cli {
    /// Daemon config (TOML, or JSON by extension).
    #[arg(long, required_unless_present = "replay")]
    config: Option<PathBuf>,
    /// Run a finite source to completion, then exit.
    #[arg(long)]
    once: bool,
    /// Check the config and exit.
    #[arg(long)]
    validate_config: bool,
    /// Replay one scenario file through the pipeline with its scripted backend.
    #[arg(long, conflicts_with = "validate_config")]
    replay: Option<PathBuf>,
    /// With --once or --replay, keep serving HTTP after the run until interrupted.
    #[arg(long)]
    linger: bool,
    /// HTTP bind address, overriding the config.
    #[arg(long)]
    bind: Option<String>,
}

fn print_summary(summary: &RunSummary) {
    println!(
        "{}",
        serde_json::json!({
            "end": summary.end,
            "cycles": summary.cycles,
            "alerts": summary.alerts,
            "errors": summary.errors,
            "dropped_batches": summary.dropped_batches,
            "residual_frames": summary.residual_frames,
            "p50_cycle_ms": summary.report.percentiles.cycle.p50,
        })
    );
}

fn run(config: PipelineConfig, linger: bool, stop: Arc<AtomicBool>) -> ExitCode {
    let handle = match Pipeline::start(config) {
        Ok(h) => h,
        Err(e) => {
            error!(error = %e, "startup failed");
            eprintln!("childwatchd: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(addr) = handle.http_addr() {
        println!("listening on http://{addr}");
    }
    let flag = handle.shutdown_flag();
    let watcher = {
        let stop = stop.clone();
        std::thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                std::thread::sleep(std::time::Duration::from_millis(50));
            }
            flag.store(true, Ordering::SeqCst);
        })
    };
    let summary = if linger {
        handle.wait_and_linger(&stop)
    } else {
        handle.wait()
    };
    stop.store(true, Ordering::SeqCst);
    let _ = watcher.join();
    print_summary(&summary);
    match summary.end {
        EndReason::SourceFailed(_) => ExitCode::FAILURE,
        _ => ExitCode::SUCCESS,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)) {
            error!(error = %e, "could not install the interrupt handler");
        }
    }

    if let Some(path) = &cli.replay {
        let scenario = match load_scenario(path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("childwatchd: {}: {e}", path.display());
                return ExitCode::FAILURE;
            }
        };
        let scratch = match tempfile::Builder::new().prefix("childwatchd-replay-").tempdir() {
            Ok(d) => d,
            Err(e) => {
                eprintln!("childwatchd: {e}");
                return ExitCode::FAILURE;
            }
        };
        let mut config = match scenario_config(&scenario, scratch.path(), &ReplayOverrides::default()) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("childwatchd: {e}");
                return ExitCode::FAILURE;
            }
        };
        // a daemon config, when given, contributes policy and HTTP settings
        if let Some(base) = cli.config.as_deref() {
            match PipelineConfig::load(base) {
                Ok(b) => {
                    config.policy = b.policy;
                    config.http = b.http;
                }
                Err(e) => {
                    eprintln!("childwatchd: {e}");
                    return ExitCode::FAILURE;
                }
            }
        }
        if let Some(bind) = cli.bind {
            config.http = Some(HttpSection { bind });
        }
        info!(scenario = %scenario.name, store = %scratch.path().display(), "replaying scenario");
        return run(config, cli.linger, stop);
    }

    let path = cli.config.expect("clap enforces --config");
    let mut config = match PipelineConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("childwatchd: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(bind) = cli.bind {
        config.http = Some(HttpSection { bind });
    }
    if let Err(e) = config.validate() {
        eprintln!("childwatchd: {e}");
        return ExitCode::FAILURE;
    }
    if cli.validate_config {
        println!("config ok: {}", path.display());
        return ExitCode::SUCCESS;
    }
    // without --once a finite source still ends the run; --linger keeps HTTP up
    run(config, cli.linger || !cli.once, stop)
}
