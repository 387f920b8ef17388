use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::Amount;
use crate::intra::{DEFAULT_BLOCK_CAPACITY, DEFAULT_ROUND_TIMEOUT_MS};
use crate::inter::{BLOCK_CAPACITY, DEFAULT_CONFIRMATION_DEPTH};
use crate::ledger::{ZoneId, MAX_PAYLOAD};
use crate::sim::{LinkModel, Millis};

/// Pause between a commit and the next height. With the default link model
/// and round timeout this yields a mean block interval close to 1.6 s.
pub const DEFAULT_COMMIT_DELAY_MS: Millis = 1_300;
pub const DEFAULT_BLOCK_INTERVAL_MS: f64 = 4_500.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("zone {zone}: {n} validators cannot tolerate {byzantine} byzantine (need n >= 3f+1)")]
    Bft { zone: ZoneId, n: usize, byzantine: usize },
    #[error("zone ids must be unique and non-zero (got {0})")]
    BadZone(ZoneId),
    #[error("unknown zone {0}")]
    UnknownZone(ZoneId),
    #[error("zone {0} serves sessions but has no delegates")]
    NoDelegates(ZoneId),
    #[error("unknown fault target `{0}`")]
    UnknownTarget(String),
    #[error("fault `{0}` needs {1}")]
    FaultShape(String, &'static str),
    #[error("network: {0}")]
    Net(String),
    #[error("{0}")]
    Field(String),
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "Scenario::default_duration")]
    pub duration_ms: Millis,
    /// Reject committees that cannot tolerate their declared byzantine count.
    #[serde(default = "yes")]
    pub assert_safety: bool,
    /// Scan cross-domain traffic for leaked domain payload bytes.
    #[serde(default = "yes")]
    pub privacy_scan: bool,
    #[serde(default)]
    pub net: LinkModel,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub domains: Vec<DomainSpec>,
    #[serde(default)]
    pub inter: InterSpec,
    #[serde(default)]
    pub workload: Vec<Workload>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Values a batch run is compared against.
    #[serde(default)]
    pub reference: Option<Reference>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    /// Defaults to five times the mean inter-domain delay.
    pub request_timeout_ms: Option<Millis>,
    /// Defaults to a third of the request timeout.
    pub keepalive_ms: Option<Millis>,
    pub intra_timeout_ms: Option<Millis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub zone_id: ZoneId,
    #[serde(default = "DomainSpec::default_validators")]
    pub validators: usize,
    #[serde(default)]
    pub byzantine: usize,
    #[serde(default = "DomainSpec::default_capacity")]
    pub block_capacity: usize,
    #[serde(default = "DomainSpec::default_round_timeout")]
    pub round_timeout_ms: Millis,
    #[serde(default = "DomainSpec::default_commit_delay")]
    pub commit_delay_ms: Millis,
    #[serde(default = "DomainSpec::default_delegates")]
    pub delegates: usize,
}

impl DomainSpec {
    fn default_validators() -> usize {
        4
    }
    fn default_capacity() -> usize {
        DEFAULT_BLOCK_CAPACITY
    }
    fn default_round_timeout() -> Millis {
        DEFAULT_ROUND_TIMEOUT_MS
    }
    fn default_commit_delay() -> Millis {
        DEFAULT_COMMIT_DELAY_MS
    }
    fn default_delegates() -> usize {
        2
    }

    pub fn new(zone_id: ZoneId) -> Self {
        Self {
            zone_id,
            validators: Self::default_validators(),
            byzantine: 0,
            block_capacity: Self::default_capacity(),
            round_timeout_ms: Self::default_round_timeout(),
            commit_delay_ms: Self::default_commit_delay(),
            delegates: Self::default_delegates(),
        }
    }

    /// Faults the committee tolerates.
    pub fn f(&self) -> usize {
        self.validators.saturating_sub(1) / 3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningKind {
    Virtual,
    Puzzle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterSpec {
    /// Mining-only nodes, on top of the delegates (which also mine).
    pub miners: usize,
    pub mode: MiningKind,
    pub mean_block_interval_ms: f64,
    pub block_capacity: usize,
    pub confirmation_depth: u64,
    pub fee: Amount,
    /// Exchange contracts deployed at genesis; defaults to one per session.
    pub contracts: Option<u64>,
    pub block_reward: Amount,
    /// Puzzle mode: expected hashes per block.
    pub expected_hashes: u64,
}

impl Default for InterSpec {
    fn default() -> Self {
        Self {
            miners: 4,
            mode: MiningKind::Virtual,
            mean_block_interval_ms: DEFAULT_BLOCK_INTERVAL_MS,
            block_capacity: BLOCK_CAPACITY,
            confirmation_depth: DEFAULT_CONFIRMATION_DEPTH,
            fee: Amount::INTER_FEE,
            contracts: None,
            block_reward: Amount::ZERO,
            expected_hashes: 4_096,
        }
    }
}

/// Sessions and synthetic load. Every field is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    pub sessions: usize,
    pub seller_zone: Option<ZoneId>,
    pub buyer_zone: Option<ZoneId>,
    /// Escrow per session.
    pub deposit: Amount,
    /// Buyer's starting domain balance; defaults to the deposit.
    pub buyer_balance: Option<Amount>,
    pub session_start_ms: Millis,
    pub session_spacing_ms: Millis,
    pub data_delivered: bool,
    pub buyer_ready: bool,
    /// Size of each side's requirements payload (random bytes).
    pub payload_bytes: usize,

    /// Zone receiving the synthetic domain load.
    pub zone: Option<ZoneId>,
    /// Open-loop domain transactions per second.
    pub intra_rate: f64,
    /// Closed-loop clients, each keeping `intra_window` in flight.
    pub intra_clients: usize,
    pub intra_window: usize,
    pub intra_payload_bytes: usize,
    /// Open-loop inter-ledger transfers per second.
    pub inter_rate: f64,
    pub load_start_ms: Millis,
    pub load_stop_ms: Option<Millis>,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            sessions: 0,
            seller_zone: None,
            buyer_zone: None,
            deposit: Amount(Amount::UNITS_PER_TOKEN),
            buyer_balance: None,
            session_start_ms: 1_000,
            session_spacing_ms: 500,
            data_delivered: true,
            buyer_ready: true,
            payload_bytes: MAX_PAYLOAD,
            zone: None,
            intra_rate: 0.0,
            intra_clients: 0,
            intra_window: 1,
            intra_payload_bytes: 64,
            inter_rate: 0.0,
            load_start_ms: 0,
            load_stop_ms: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    Crash,
    Recover,
    Equivocate,
    Silent,
    Delay,
    Partition,
    Heal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub at_ms: Millis,
    pub kind: FaultKind,
    /// Node name such as `zone1.validator3`, `zone2.delegate0`, `miner1`,
    /// `admin`, `auditor`, `session0.seller`.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub hold_ms: Option<Millis>,
    /// Partition only: the two sides.
    #[serde(default)]
    pub groups: Option<[Vec<String>; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Reference {
    pub intra_latency_mean_s: Option<f64>,
    pub intra_latency_std_s: Option<f64>,
    pub inter_latency_mean_s: Option<f64>,
    pub inter_latency_std_s: Option<f64>,
    pub intra_throughput: Option<f64>,
    pub inter_throughput: Option<f64>,
}

impl Scenario {
    fn default_duration() -> Millis {
        60_000
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|sp| line_col(text, sp.start))
                .unwrap_or((0, 0));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn request_timeout_ms(&self) -> Millis {
        self.timing
            .request_timeout_ms
            .unwrap_or_else(|| (5.0 * self.net.inter_mean_ms()).round() as Millis)
    }

    pub fn keepalive_ms(&self) -> Millis {
        self.timing
            .keepalive_ms
            .unwrap_or_else(|| (self.request_timeout_ms() / 3).max(1))
    }

    pub fn intra_timeout_ms(&self) -> Millis {
        self.timing.intra_timeout_ms.unwrap_or(30_000)
    }

    pub fn domain(&self, zone: ZoneId) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.zone_id == zone)
    }

    /// Seller and buyer zone of a workload entry after defaults.
    pub fn session_zones(&self, w: &Workload) -> (ZoneId, ZoneId) {
        let first = self.domains.first().map_or(1, |d| d.zone_id);
        let second = self.domains.get(1).map_or(first, |d| d.zone_id);
        (w.seller_zone.unwrap_or(first), w.buyer_zone.unwrap_or(second))
    }

    pub fn total_sessions(&self) -> usize {
        self.workload.iter().map(|w| w.sessions).sum()
    }

    pub fn contract_count(&self) -> u64 {
        self.inter
            .contracts
            .unwrap_or_else(|| self.total_sessions().max(1) as u64)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        self.net.validate().map_err(ValidationError::Net)?;
        let mut zones = BTreeSet::new();
        for d in &self.domains {
            if d.zone_id == 0 || !zones.insert(d.zone_id) {
                return Err(ValidationError::BadZone(d.zone_id));
            }
            if d.validators == 0 {
                return Err(ValidationError::Field(format!(
                    "zone {}: needs at least one validator",
                    d.zone_id
                )));
            }
            if d.block_capacity == 0 || d.round_timeout_ms == 0 {
                return Err(ValidationError::Field(format!(
                    "zone {}: block_capacity and round_timeout_ms must be positive",
                    d.zone_id
                )));
            }
            if self.assert_safety && d.validators < 3 * d.byzantine + 1 {
                return Err(ValidationError::Bft {
                    zone: d.zone_id,
                    n: d.validators,
                    byzantine: d.byzantine,
                });
            }
        }
        let i = &self.inter;
        if !(i.mean_block_interval_ms > 0.0) || i.block_capacity == 0 || i.confirmation_depth == 0 {
            return Err(ValidationError::Field(
                "inter: interval, capacity and confirmation depth must be positive".into(),
            ));
        }
        if i.mode == MiningKind::Puzzle && i.expected_hashes == 0 {
            return Err(ValidationError::Field("inter: expected_hashes must be positive".into()));
        }
        for w in &self.workload {
            if w.sessions > 0 {
                let (s, b) = self.session_zones(w);
                for z in [s, b] {
                    let d = self.domain(z).ok_or(ValidationError::UnknownZone(z))?;
                    if d.delegates == 0 {
                        return Err(ValidationError::NoDelegates(z));
                    }
                }
                if w.deposit.is_zero() {
                    return Err(ValidationError::Field("workload: deposit must be positive".into()));
                }
            }
            if w.payload_bytes > MAX_PAYLOAD || w.intra_payload_bytes > MAX_PAYLOAD {
                return Err(ValidationError::Field(format!(
                    "workload: payloads are limited to {MAX_PAYLOAD} bytes"
                )));
            }
            if w.intra_rate > 0.0 || w.intra_clients > 0 {
                let z = w.zone.or(self.domains.first().map(|d| d.zone_id));
                match z {
                    Some(z) if self.domain(z).is_some() => {}
                    Some(z) => return Err(ValidationError::UnknownZone(z)),
                    None => return Err(ValidationError::Field("workload: no domain for load".into())),
                }
            }
            if w.intra_rate < 0.0 || w.inter_rate < 0.0 || !w.intra_rate.is_finite() || !w.inter_rate.is_finite() {
                return Err(ValidationError::Field("workload: rates must be non-negative".into()));
            }
        }
        let names = self.node_names();
        let known = |n: &str| names.contains(n);
        let mut byz_per_zone = std::collections::BTreeMap::<ZoneId, BTreeSet<String>>::new();
        for f in &self.faults {
            match f.kind {
                FaultKind::Partition => {
                    let groups = f
                        .groups
                        .as_ref()
                        .ok_or_else(|| ValidationError::FaultShape("partition".into(), "`groups`"))?;
                    for n in groups.iter().flatten() {
                        if !known(n) {
                            return Err(ValidationError::UnknownTarget(n.clone()));
                        }
                    }
                }
                FaultKind::Heal => {}
                kind => {
                    let t = f.target.as_ref().ok_or_else(|| {
                        ValidationError::FaultShape(format!("{kind:?}").to_lowercase(), "a `target`")
                    })?;
                    if !known(t) {
                        return Err(ValidationError::UnknownTarget(t.clone()));
                    }
                    if matches!(kind, FaultKind::Equivocate | FaultKind::Silent | FaultKind::Delay) {
                        if let Some(z) = zone_of_validator(t) {
                            byz_per_zone.entry(z).or_default().insert(t.clone());
                        }
                    }
                }
            }
        }
        if self.assert_safety {
            for (z, set) in byz_per_zone {
                let d = self.domain(z).expect("target names a known zone");
                if set.len() > d.f() {
                    return Err(ValidationError::Bft {
                        zone: z,
                        n: d.validators,
                        byzantine: set.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Every addressable node name.
    pub fn node_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for d in &self.domains {
            for i in 0..d.validators {
                out.insert(format!("zone{}.validator{i}", d.zone_id));
            }
            for i in 0..d.delegates {
                out.insert(format!("zone{}.delegate{i}", d.zone_id));
            }
        }
        for i in 0..self.inter.miners {
            out.insert(format!("miner{i}"));
        }
        out.insert("admin".into());
        out.insert("auditor".into());
        for i in 0..self.total_sessions() {
            out.insert(format!("session{i}.seller"));
            out.insert(format!("session{i}.buyer"));
        }
        out
    }
}

fn zone_of_validator(name: &str) -> Option<ZoneId> {
    let (zone, rest) = name.strip_prefix("zone")?.split_once('.')?;
    rest.starts_with("validator").then(|| zone.parse().ok())?
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_toml("[[domains]]\nzone_id = 1\n").unwrap();
        assert_eq!(s.domains[0].block_capacity, 1000);
        assert_eq!(s.domains[0].validators, 4);
        assert_eq!(s.inter.mean_block_interval_ms, 4500.0);
        assert_eq!(s.inter.block_capacity, 571);
        assert_eq!(s.inter.confirmation_depth, 6);
    }

    #[test]
    fn too_many_byzantine_rejected() {
        let e = Scenario::from_toml("[[domains]]\nzone_id = 1\nvalidators = 4\nbyzantine = 2\n")
            .unwrap_err();
        assert!(matches!(
            e,
            ScenarioError::Invalid(ValidationError::Bft { n: 4, byzantine: 2, .. })
        ));
    }

    #[test]
    fn gate_can_be_lifted() {
        let s = Scenario::from_toml(
            "assert_safety = false\n[[domains]]\nzone_id = 1\nvalidators = 4\nbyzantine = 2\n",
        );
        assert!(s.is_ok());
    }

    #[test]
    fn unknown_key_is_named_with_line() {
        let e = Scenario::from_toml("seed = 1\n\n[[domains]]\nzone_id = 1\nvalidatorz = 4\n")
            .unwrap_err();
        match e {
            ScenarioError::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("validatorz"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn byzantine_faults_count_against_f() {
        let text = r#"
[[domains]]
zone_id = 1
[[faults]]
at_ms = 0
kind = "equivocate"
target = "zone1.validator1"
[[faults]]
at_ms = 0
kind = "silent"
target = "zone1.validator2"
"#;
        assert!(matches!(
            Scenario::from_toml(text),
            Err(ScenarioError::Invalid(ValidationError::Bft { byzantine: 2, .. }))
        ));
    }

    #[test]
    fn unknown_target_rejected() {
        let text = "[[domains]]\nzone_id = 1\n[[faults]]\nat_ms = 5\nkind = \"crash\"\ntarget = \"zone9.delegate0\"\n";
        assert!(matches!(
            Scenario::from_toml(text),
            Err(ScenarioError::Invalid(ValidationError::UnknownTarget(_)))
        ));
    }

    #[test]
    fn request_timeout_is_five_mean_delays() {
        let s = Scenario::from_toml("").unwrap();
        // median 200, sigma 1: mean = 200 * e^0.5
        assert_eq!(s.request_timeout_ms(), 1649);
        assert_eq!(s.keepalive_ms(), 549);
    }

    #[test]
    fn toml_roundtrip() {
        let s = Scenario::from_toml("seed = 3\n[[domains]]\nzone_id = 2\n[[workload]]\nsessions = 2\n")
            .unwrap();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }
}
