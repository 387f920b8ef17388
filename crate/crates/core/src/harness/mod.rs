//! Scenario files, run assembly, metrics, event logs and log verification.

mod batch;
mod eventlog;
mod metrics;
mod privacy;
mod scenario;
mod verify;
mod world;

pub use batch::{aggregate, batch, BatchReport, Comparison};
pub use eventlog::{log_digest, parse_log, EventLog, LogError, LogLine};
pub use metrics::{
    CsvError, InterMetrics, IntraMetrics, LatencyStats, MetricsReport, ReportError, SessionReport,
    SideReport,
};
pub use privacy::{Leak, PrivacyScanner, WINDOW};
pub use scenario::{
    load_scenario, DomainSpec, FaultKind, FaultSpec, InterSpec, MiningKind, Reference, Scenario,
    ScenarioError, Timing, ValidationError, Workload, DEFAULT_BLOCK_INTERVAL_MS,
    DEFAULT_COMMIT_DELAY_MS,
};
pub use verify::{check_lines, verify, Failure, VerifyError};
pub use world::{run, session_id, BuildError, Layout, RunOutput, SessionNodes, World};
