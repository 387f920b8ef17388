use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsim_core::harness::{
    batch, load_scenario, run, verify, BatchReport, BuildError, MetricsReport, ScenarioError,
    VerifyError,
};
use thiserror::Error;

/// Environment variable controlling log verbosity (`error` .. `trace`).
const LOG_ENV: &str = "FEDSIM_LOG";

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated two-tier ledger simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Event log path; defaults to `<out>.events.jsonl` when `--out` is given.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory for `ledgers.csv` and `sessions.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run consecutive seeds and aggregate.
    Batch {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        runs: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay an event log through the invariant checkers.
    VerifyLog {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: not a report: {source}")]
    Report { path: PathBuf, source: fedsim_core::harness::ReportError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write(p, text.as_bytes()),
        None => io::stdout().write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn violations(r: &MetricsReport) -> Vec<String> {
    let mut v = Vec::new();
    if r.safety_violations > 0 {
        v.push(format!("{} safety violations", r.safety_violations));
    }
    if r.double_payouts > 0 {
        v.push(format!("{} double payouts", r.double_payouts));
    }
    if r.conservation_delta != 0 {
        v.push(format!("conservation delta {}", r.conservation_delta));
    }
    if r.privacy_violations > 0 {
        v.push(format!("{} privacy violations", r.privacy_violations));
    }
    v
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every check passed.
fn execute(cmd: Command) -> Result<bool, CliError> {
    match cmd {
        Command::Run {
            scenario,
            seed,
            out,
            log,
            csv,
        } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            log::info!("running {} with seed {}", scenario.display(), s.seed);
            let output = run(&s)?;
            let report = &output.report;
            emit(out.as_deref(), &report.to_json())?;
            let log_path = log.or_else(|| out.as_ref().map(|o| o.with_extension("events.jsonl")));
            if let Some(p) = &log_path {
                write(p, &output.log)?;
            }
            if let Some(dir) = &csv {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let csv_err = |e: fedsim_core::harness::CsvError| CliError::Io {
                    path: dir.clone(),
                    source: io::Error::other(e),
                };
                write(&dir.join("ledgers.csv"), report.ledgers_csv().map_err(csv_err)?.as_bytes())?;
                write(&dir.join("sessions.csv"), report.sessions_csv().map_err(csv_err)?.as_bytes())?;
            }
            let v = violations(report);
            eprintln!(
                "seed {}: {}/{} sessions settled, digest {}",
                report.seed,
                report.completed_sessions(),
                report.sessions.len(),
                report.event_log_digest
            );
            for line in &v {
                eprintln!("violation: {line}");
            }
            Ok(v.is_empty())
        }
        Command::Batch {
            scenario,
            runs,
            seed,
            out,
        } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let b: BatchReport = batch(&s, runs)?;
            emit(out.as_deref(), &b.to_json())?;
            eprintln!(
                "{} runs: intra latency {:.3}±{:.3} s, inter latency {:.3}±{:.3} s, {}/{} sessions settled",
                b.runs,
                b.intra_latency.mean,
                b.intra_latency.std,
                b.inter_latency.mean,
                b.inter_latency.std,
                b.settled_sessions,
                b.total_sessions
            );
            for c in &b.comparisons {
                eprintln!(
                    "{}: measured {:.4}, reference {:.4} ({:+.1}%)",
                    c.metric,
                    c.measured,
                    c.reference,
                    c.relative_error * 100.0
                );
            }
            Ok(!b.has_violations())
        }
        Command::VerifyLog { report, log } => {
            let text = fs::read_to_string(&report).map_err(io_err(&report))?;
            let r = MetricsReport::from_json(&text).map_err(|source| CliError::Report {
                path: report.clone(),
                source,
            })?;
            let bytes = fs::read(&log).map_err(io_err(&log))?;
            let failures = verify(&r, &bytes)?;
            if failures.is_empty() {
                println!("pass");
            } else {
                for f in &failures {
                    println!("fail: {f}");
                }
            }
            Ok(failures.is_empty())
        }
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario)?;
            println!(
                "ok: {} domains, {} sessions, {} nodes, {} ms",
                s.domains.len(),
                s.total_sessions(),
                s.node_names().len(),
                s.duration_ms
            );
            Ok(true)
        }
    }
}
