use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{LatencyStats, MetricsReport};
use super::scenario::Scenario;
use super::world::{run, BuildError};

/// Measured value next to a configured reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub measured: f64,
    pub reference: f64,
    /// `(measured - reference) / reference`.
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub first_seed: u64,
    pub runs: u64,
    pub intra_latency: LatencyStats,
    pub inter_latency: LatencyStats,
    /// Mean over runs of the summed intra throughput of all domains.
    pub intra_throughput: f64,
    pub inter_throughput: f64,
    pub safety_violations: u64,
    pub privacy_violations: u64,
    /// Runs whose conservation delta was not zero.
    pub conservation_failures: u64,
    pub settled_sessions: u64,
    pub total_sessions: u64,
    pub comparisons: Vec<Comparison>,
    /// Per-run reports, ordered by seed.
    pub reports: Vec<MetricsReport>,
}

impl BatchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("batch report serializes");
        s.push('\n');
        s
    }

    pub fn has_violations(&self) -> bool {
        self.safety_violations > 0 || self.privacy_violations > 0 || self.conservation_failures > 0
    }
}

/// Runs seeds `seed .. seed + runs` in parallel and aggregates them.
pub fn batch(scenario: &Scenario, runs: u64) -> Result<BatchReport, BuildError> {
    let runs = runs.max(1);
    let mut reports = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut s = scenario.clone();
            s.seed = scenario.seed.wrapping_add(i);
            run(&s).map(|o| o.report)
        })
        .collect::<Result<Vec<_>, _>>()?;
    reports.sort_by_key(|r| r.seed);
    Ok(aggregate(scenario, reports))
}

pub fn aggregate(scenario: &Scenario, reports: Vec<MetricsReport>) -> BatchReport {
    let n = reports.len().max(1) as f64;
    let intra: Vec<_> = reports
        .iter()
        .flat_map(|r| r.intra.iter().map(|m| m.commit_latency))
        .collect();
    let inter: Vec<_> = reports.iter().map(|r| r.inter.commit_latency).collect();
    let intra_latency = LatencyStats::pool(&intra);
    let inter_latency = LatencyStats::pool(&inter);
    let intra_throughput = reports
        .iter()
        .map(|r| r.intra.iter().map(|m| m.tx_throughput).sum::<f64>())
        .sum::<f64>()
        / n;
    let inter_throughput = reports.iter().map(|r| r.inter.tx_throughput).sum::<f64>() / n;

    let mut comparisons = Vec::new();
    if let Some(r) = &scenario.reference {
        for (metric, measured, reference) in [
            ("intra_latency_mean_s", intra_latency.mean, r.intra_latency_mean_s),
            ("intra_latency_std_s", intra_latency.std, r.intra_latency_std_s),
            ("inter_latency_mean_s", inter_latency.mean, r.inter_latency_mean_s),
            ("inter_latency_std_s", inter_latency.std, r.inter_latency_std_s),
            ("intra_throughput", intra_throughput, r.intra_throughput),
            ("inter_throughput", inter_throughput, r.inter_throughput),
        ] {
            if let Some(reference) = reference {
                comparisons.push(Comparison {
                    metric: metric.to_string(),
                    measured,
                    reference,
                    relative_error: if reference != 0.0 {
                        (measured - reference) / reference
                    } else {
                        0.0
                    },
                });
            }
        }
    }

    BatchReport {
        first_seed: reports.first().map_or(scenario.seed, |r| r.seed),
        runs: reports.len() as u64,
        intra_latency,
        inter_latency,
        intra_throughput,
        inter_throughput,
        safety_violations: reports.iter().map(|r| r.safety_violations).sum(),
        privacy_violations: reports.iter().map(|r| r.privacy_violations).sum(),
        conservation_failures: reports.iter().filter(|r| r.conservation_delta != 0).count() as u64,
        settled_sessions: reports.iter().map(|r| r.completed_sessions() as u64).sum(),
        total_sessions: reports.iter().map(|r| r.sessions.len() as u64).sum(),
        comparisons,
        reports,
    }
}
