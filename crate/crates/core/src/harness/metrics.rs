use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::contract::Side;
use crate::crypto::{Address, Digest};
use crate::ledger::ZoneId;
use crate::protocol::{FailReason, Phase};
use crate::sim::Millis;

pub type ReportError = serde_json::Error;
pub type CsvError = csv::Error;

/// Summary of a latency sample, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl LatencyStats {
    pub fn from_millis(samples: &[Millis]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s: Vec<f64> = samples.iter().map(|&m| m as f64 / 1000.0).collect();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        Self {
            count: n as u64,
            mean,
            std: var.sqrt(),
            median,
            min: s[0],
            max: s[n - 1],
        }
    }

    /// Combines per-run summaries as if all samples had been pooled. The
    /// median of the pool is not recoverable; the count-weighted mean of
    /// the run medians stands in for it.
    pub fn pool(parts: &[LatencyStats]) -> Self {
        let parts: Vec<_> = parts.iter().filter(|p| p.count > 0).collect();
        let n: u64 = parts.iter().map(|p| p.count).sum();
        if n == 0 {
            return Self::default();
        }
        if parts.len() == 1 {
            return *parts[0];
        }
        let nf = n as f64;
        let mean = parts.iter().map(|p| p.count as f64 * p.mean).sum::<f64>() / nf;
        let ss: f64 = parts
            .iter()
            .map(|p| (p.count as f64 - 1.0) * p.std * p.std + p.count as f64 * (p.mean - mean).powi(2))
            .sum();
        let std = if n > 1 { (ss / (nf - 1.0)).sqrt() } else { 0.0 };
        Self {
            count: n,
            mean,
            std,
            median: parts.iter().map(|p| p.count as f64 * p.median).sum::<f64>() / nf,
            min: parts.iter().map(|p| p.min).fold(f64::INFINITY, f64::min),
            max: parts.iter().map(|p| p.max).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Coefficient of variation; zero for an empty sample.
    pub fn ratio(&self) -> f64 {
        if self.mean > 0.0 {
            self.std / self.mean
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntraMetrics {
    pub zone: ZoneId,
    pub tx_count: u64,
    pub tx_throughput: f64,
    pub commit_latency: LatencyStats,
    pub block_count: u64,
    pub mean_block_interval_s: f64,
    /// Heights decided after round 0.
    pub late_rounds: u64,
    /// Load transactions submitted but not committed by the end.
    pub uncommitted: u64,
    pub equivocations: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterMetrics {
    pub tx_count: u64,
    pub tx_throughput: f64,
    pub commit_latency: LatencyStats,
    pub block_count: u64,
    pub confirmed_height: u64,
    /// Blocks mined that did not end up on the canonical chain.
    pub stale_blocks: u64,
    pub reorgs: u64,
    pub reverted_confirmed: u64,
    pub mined_per_node: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideReport {
    pub side: Side,
    pub zone: ZoneId,
    pub address: Address,
    pub phase: Phase,
    pub reason: Option<FailReason>,
    pub phase_times_ms: BTreeMap<Phase, Millis>,
    /// `(at, successor)` per failover.
    pub failovers: Vec<(Millis, Address)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session: Digest,
    pub outcome: String,
    pub contract_id: Option<u64>,
    pub contract_status: Option<crate::contract::BrokerStatus>,
    /// Both sides' commit_service recorded on the contract.
    pub dual_commit: bool,
    pub seller_payments: u64,
    pub started_ms: Millis,
    pub completed_ms: Option<Millis>,
    pub seller: SideReport,
    pub buyer: SideReport,
}

/// Everything a run reports. Serialized as pretty JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub duration_ms: Millis,
    pub intra: Vec<IntraMetrics>,
    pub inter: InterMetrics,
    pub sessions: Vec<SessionReport>,
    /// Conflicting domain commits plus payment-safety violations.
    pub safety_violations: u64,
    pub intra_conflicts: u64,
    pub payment_violations: u64,
    pub double_payouts: u64,
    /// Contracts paid out whose seller had not been paid by the end of the
    /// run. Not a violation: the delegate pays after confirmation.
    pub paid_unsettled: u64,
    /// Token units created or destroyed, summed over every ledger.
    pub conservation_delta: i64,
    pub privacy_violations: u64,
    /// Messages rewritten by equivocating nodes.
    pub equivocated_messages: u64,
    pub events: u64,
    pub event_log_digest: Digest,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text)
    }

    pub fn completed_sessions(&self) -> usize {
        self.sessions.iter().filter(|s| s.outcome == "settled").count()
    }

    /// One row per ledger.
    pub fn ledgers_csv(&self) -> Result<String, CsvError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "ledger", "zone", "tx_count", "tx_throughput", "block_count", "latency_count",
            "latency_mean_s", "latency_std_s", "latency_median_s", "latency_min_s", "latency_max_s",
        ])?;
        let row = |w: &mut csv::Writer<Vec<u8>>, ledger: &str, zone: ZoneId, tx: u64, tput: f64, blocks: u64, l: &LatencyStats| {
            w.write_record([
                ledger.to_string(),
                zone.to_string(),
                tx.to_string(),
                tput.to_string(),
                blocks.to_string(),
                l.count.to_string(),
                l.mean.to_string(),
                l.std.to_string(),
                l.median.to_string(),
                l.min.to_string(),
                l.max.to_string(),
            ])
        };
        for m in &self.intra {
            row(&mut w, "intra", m.zone, m.tx_count, m.tx_throughput, m.block_count, &m.commit_latency)?;
        }
        let i = &self.inter;
        row(&mut w, "inter", 0, i.tx_count, i.tx_throughput, i.block_count, &i.commit_latency)?;
        finish(w)
    }

    /// One row per session.
    pub fn sessions_csv(&self) -> Result<String, CsvError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "session", "outcome", "contract_id", "seller_phase", "buyer_phase", "started_ms",
            "completed_ms", "seller_failovers", "buyer_failovers", "seller_payments",
        ])?;
        for s in &self.sessions {
            w.write_record([
                s.session.to_hex(),
                s.outcome.clone(),
                s.contract_id.map(|c| c.to_string()).unwrap_or_default(),
                format!("{:?}", s.seller.phase).to_uppercase(),
                format!("{:?}", s.buyer.phase).to_uppercase(),
                s.started_ms.to_string(),
                s.completed_ms.map(|c| c.to_string()).unwrap_or_default(),
                s.seller.failovers.len().to_string(),
                s.buyer.failovers.len().to_string(),
                s.seller_payments.to_string(),
            ])?;
        }
        finish(w)
    }
}

fn finish(mut w: csv::Writer<Vec<u8>>) -> csv::Result<String> {
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_sample() {
        let s = LatencyStats::from_millis(&[1000, 2000, 3000, 4000]);
        assert_eq!(s.count, 4);
        assert!((s.mean - 2.5).abs() < 1e-12);
        assert!((s.std - 1.290_994_448_7).abs() < 1e-9);
        assert!((s.median - 2.5).abs() < 1e-12);
        assert_eq!((s.min, s.max), (1.0, 4.0));
    }

    #[test]
    fn pooling_matches_direct_computation() {
        let a = [1200, 1500, 1700, 1600];
        let b = [900, 3100, 2000];
        let all: Vec<_> = a.iter().chain(&b).copied().collect();
        let pooled = LatencyStats::pool(&[LatencyStats::from_millis(&a), LatencyStats::from_millis(&b)]);
        let direct = LatencyStats::from_millis(&all);
        assert_eq!(pooled.count, direct.count);
        assert!((pooled.mean - direct.mean).abs() < 1e-12);
        assert!((pooled.std - direct.std).abs() < 1e-12);
        assert_eq!((pooled.min, pooled.max), (direct.min, direct.max));
    }

    #[test]
    fn pool_of_one_is_identity() {
        let s = LatencyStats::from_millis(&[5, 8, 13]);
        assert_eq!(LatencyStats::pool(&[s]), s);
    }
}
