use std::cell::RefCell;
use std::collections::{BTreeMap, HashSet};
use std::rc::Rc;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::eventlog::EventLog;
use super::metrics::{
    InterMetrics, IntraMetrics, LatencyStats, MetricsReport, SessionReport, SideReport,
};
use super::privacy::PrivacyScanner;
use super::scenario::{FaultKind, MiningKind, Scenario, ValidationError};
use crate::amount::Amount;
use crate::contract::{BrokerInfo, BrokerStatus, Side};
use crate::crypto::{hash_parts, Address, Digest, Keypair, Keyring};
use crate::inter::{InterConfig, MinerState, WorldState};
use crate::intra::{ConsensusConfig, ConsensusError, DomainState, ValidatorState};
use crate::ledger::{Seal, Target, ZoneId};
use crate::protocol::{
    Directory, Event, FullNode, IntraReplica, LoadClient, LoadConfig, MiningMode, Msg, Phase,
    SessionClient, SessionSpec, ValidatorNode, ZoneInfo,
};
use crate::sim::{Behavior, Fault, FaultEntry, Millis, NodeId, SimError, Simulator, PUBLIC_ZONE};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

/// Node ids of one session's two clients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionNodes {
    pub id: Digest,
    pub seller: NodeId,
    pub buyer: NodeId,
}

/// Where every role ended up in the simulator.
#[derive(Clone, Debug, Default)]
pub struct Layout {
    pub validators: BTreeMap<ZoneId, Vec<NodeId>>,
    pub delegates: BTreeMap<ZoneId, Vec<NodeId>>,
    pub miners: Vec<NodeId>,
    pub admin: NodeId,
    pub auditor: NodeId,
    pub sessions: Vec<SessionNodes>,
    pub intra_load: Vec<(ZoneId, NodeId)>,
    pub inter_load: Vec<NodeId>,
    pub names: BTreeMap<String, NodeId>,
}

impl Layout {
    pub fn full_nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<_> = self.delegates.values().flatten().copied().collect();
        out.extend(&self.miners);
        out.push(self.admin);
        out.push(self.auditor);
        out
    }
}

/// Output of a finished run.
pub struct RunOutput {
    pub report: MetricsReport,
    /// JSON-lines event log; `report.event_log_digest` is its SHA-256.
    pub log: Vec<u8>,
}

/// An assembled simulation that can be stepped and inspected.
pub struct World {
    scenario: Scenario,
    sim: Simulator<Msg, Event>,
    layout: Layout,
    genesis: Event,
    privacy: Option<Rc<RefCell<PrivacyScanner>>>,
    byzantine: HashSet<NodeId>,
}

fn key(name: &str) -> Keypair {
    Keypair::from_seed(name.as_bytes())
}

pub fn session_id(index: usize) -> Digest {
    hash_parts(&[b"session", &(index as u64).to_be_bytes()])
}

fn service_ref(index: usize) -> Digest {
    hash_parts(&[b"service", &(index as u64).to_be_bytes()])
}

struct SessionPlan {
    seller_zone: ZoneId,
    buyer_zone: ZoneId,
    deposit: Amount,
    buyer_balance: Amount,
    start: Millis,
    data_delivered: bool,
    buyer_ready: bool,
    payload_bytes: usize,
}

impl World {
    pub fn build(scenario: &Scenario) -> Result<World, BuildError> {
        scenario.validate()?;
        let s = scenario;
        let mut layout = Layout::default();
        let mut next: NodeId = 0;
        let mut alloc = |name: String, layout: &mut Layout| {
            let id = next;
            next += 1;
            layout.names.insert(name, id);
            id
        };

        for d in &s.domains {
            let ids = (0..d.validators)
                .map(|i| alloc(format!("zone{}.validator{i}", d.zone_id), &mut layout))
                .collect();
            layout.validators.insert(d.zone_id, ids);
        }
        for d in &s.domains {
            let ids = (0..d.delegates)
                .map(|i| alloc(format!("zone{}.delegate{i}", d.zone_id), &mut layout))
                .collect();
            layout.delegates.insert(d.zone_id, ids);
        }
        layout.miners = (0..s.inter.miners)
            .map(|i| alloc(format!("miner{i}"), &mut layout))
            .collect();
        layout.admin = alloc("admin".into(), &mut layout);
        layout.auditor = alloc("auditor".into(), &mut layout);

        let mut plans = Vec::new();
        for w in &s.workload {
            let (seller_zone, buyer_zone) = s.session_zones(w);
            for j in 0..w.sessions {
                plans.push(SessionPlan {
                    seller_zone,
                    buyer_zone,
                    deposit: w.deposit,
                    buyer_balance: w.buyer_balance.unwrap_or(w.deposit),
                    start: w.session_start_ms + j as Millis * w.session_spacing_ms,
                    data_delivered: w.data_delivered,
                    buyer_ready: w.buyer_ready,
                    payload_bytes: w.payload_bytes,
                });
            }
        }
        for (i, _) in plans.iter().enumerate() {
            let seller = alloc(format!("session{i}.seller"), &mut layout);
            let buyer = alloc(format!("session{i}.buyer"), &mut layout);
            layout.sessions.push(SessionNodes {
                id: session_id(i),
                seller,
                buyer,
            });
        }
        let first_zone = s.domains.first().map_or(1, |d| d.zone_id);
        let mut intra_load_cfg = Vec::new();
        let mut inter_load_cfg = Vec::new();
        for (wi, w) in s.workload.iter().enumerate() {
            let zone = w.zone.unwrap_or(first_zone);
            let stop = w.load_stop_ms.unwrap_or(s.duration_ms);
            if w.intra_rate > 0.0 {
                let id = alloc(format!("load{wi}.intra"), &mut layout);
                layout.intra_load.push((zone, id));
                intra_load_cfg.push((id, LoadConfig::Intra {
                    zone,
                    rate_per_s: w.intra_rate,
                    window: 0,
                    payload_bytes: w.intra_payload_bytes,
                }, w.load_start_ms, stop));
            }
            for c in 0..w.intra_clients {
                let id = alloc(format!("load{wi}.client{c}"), &mut layout);
                layout.intra_load.push((zone, id));
                intra_load_cfg.push((id, LoadConfig::Intra {
                    zone,
                    rate_per_s: 0.0,
                    window: w.intra_window.max(1),
                    payload_bytes: w.intra_payload_bytes,
                }, w.load_start_ms, stop));
            }
            if w.inter_rate > 0.0 {
                let id = alloc(format!("load{wi}.inter"), &mut layout);
                layout.inter_load.push(id);
                inter_load_cfg.push((id, LoadConfig::Inter { rate_per_s: w.inter_rate }, w.load_start_ms, stop, w.inter_rate));
            }
        }

        // Keys follow node names so addresses do not depend on the seed.
        let name_of: BTreeMap<NodeId, String> =
            layout.names.iter().map(|(n, id)| (*id, n.clone())).collect();
        let keys: Vec<Keypair> = (0..next).map(|id| key(&name_of[&id])).collect();
        let addr = |id: NodeId| keys[id].address();
        let mut keyring = Keyring::new();
        for k in &keys {
            keyring.register(k);
        }
        let keyring = Arc::new(keyring);

        let delegation_list: Vec<Address> =
            layout.delegates.values().flatten().map(|&id| addr(id)).collect();
        let mut zones = BTreeMap::new();
        for d in &s.domains {
            let z = d.zone_id;
            let validators = layout.validators[&z].clone();
            let delegates: Vec<(NodeId, Address)> =
                layout.delegates[&z].iter().map(|&id| (id, addr(id))).collect();
            let mut members: Vec<Address> = delegates.iter().map(|d| d.1).collect();
            let mut observers: Vec<NodeId> = delegates.iter().map(|d| d.0).collect();
            for (p, n) in plans.iter().zip(&layout.sessions) {
                if p.seller_zone == z {
                    members.push(addr(n.seller));
                    observers.push(n.seller);
                }
                if p.buyer_zone == z {
                    members.push(addr(n.buyer));
                    observers.push(n.buyer);
                }
            }
            for (lz, id) in &layout.intra_load {
                if *lz == z {
                    members.push(addr(*id));
                    observers.push(*id);
                }
            }
            zones.insert(
                z,
                ZoneInfo {
                    zone_id: z,
                    committee: validators.iter().map(|&v| addr(v)).collect(),
                    validators,
                    f: d.f(),
                    delegates,
                    members,
                    observers,
                },
            );
        }
        let dir = Arc::new(Directory {
            zones,
            full_nodes: layout.full_nodes(),
            admin: (layout.admin, addr(layout.admin)),
            delegation_list: delegation_list.clone(),
            keyring: keyring.clone(),
            request_timeout_ms: s.request_timeout_ms(),
            keepalive_ms: s.keepalive_ms(),
            intra_timeout_ms: s.intra_timeout_ms(),
        });

        // Genesis allocations.
        let fee = s.inter.fee;
        let mut domain_balances: BTreeMap<ZoneId, BTreeMap<Address, Amount>> =
            s.domains.iter().map(|d| (d.zone_id, BTreeMap::new())).collect();
        let mut inter_balances: BTreeMap<Address, Amount> = BTreeMap::new();
        for d in &s.domains {
            let z = d.zone_id;
            let payouts: Amount = plans.iter().filter(|p| p.seller_zone == z).map(|p| p.deposit).sum();
            let escrows: Amount = plans.iter().filter(|p| p.buyer_zone == z).map(|p| p.deposit).sum();
            let served = plans.iter().filter(|p| p.seller_zone == z || p.buyer_zone == z).count() as u64;
            for &id in &layout.delegates[&z] {
                if !payouts.is_zero() {
                    domain_balances.get_mut(&z).expect("zone").insert(addr(id), payouts);
                }
                *inter_balances.entry(addr(id)).or_default() +=
                    escrows + Amount(fee.0 * (8 * served + 100));
            }
        }
        for (p, n) in plans.iter().zip(&layout.sessions) {
            if !p.buyer_balance.is_zero() {
                *domain_balances
                    .get_mut(&p.buyer_zone)
                    .expect("zone")
                    .entry(addr(n.buyer))
                    .or_default() += p.buyer_balance;
            }
        }
        *inter_balances.entry(addr(layout.admin)).or_default() +=
            Amount(fee.0 * (100 + 4 * plans.len() as u64));
        let secs = s.duration_ms as f64 / 1000.0;
        for (id, _, _, _, rate) in &inter_load_cfg {
            let budget = ((fee.0 + 1) as f64 * (rate * secs * 1.5 + 100.0)).ceil() as u64;
            *inter_balances.entry(addr(*id)).or_default() += Amount(budget);
        }
        let contracts: Vec<BrokerInfo> = (1..=s.contract_count())
            .map(|id| BrokerInfo::new(id, addr(layout.admin), delegation_list.clone()))
            .collect();
        let genesis_world = WorldState::new(inter_balances.clone(), contracts.clone());
        let genesis = Event::Genesis {
            inter_balances: inter_balances.into_iter().collect(),
            domain_balances: domain_balances
                .iter()
                .map(|(z, b)| (*z, b.iter().map(|(a, v)| (*a, *v)).collect()))
                .collect(),
            contracts: contracts.iter().map(|c| c.contract_id).collect(),
        };
        let domain_genesis = |z: ZoneId| DomainState::new(domain_balances[&z].clone());

        let mut sim: Simulator<Msg, Event> = Simulator::new(s.seed, s.net.clone());
        let expect_id = |got: NodeId, want: NodeId| debug_assert_eq!(got, want, "layout order");

        for d in &s.domains {
            let z = d.zone_id;
            let info = dir.zone(z);
            for &id in &layout.validators[&z] {
                let mut cfg = ConsensusConfig::new(z, info.committee.clone(), d.f())?;
                cfg.block_capacity = d.block_capacity;
                cfg.round_timeout_ms = d.round_timeout_ms;
                cfg.commit_delay_ms = d.commit_delay_ms;
                let state = ValidatorState::new(keys[id].clone(), cfg, keyring.clone())?;
                let node = ValidatorNode::new(z, state, domain_genesis(z), dir.clone());
                expect_id(sim.add_node(z, Box::new(node)), id);
            }
        }

        let inter_cfg = InterConfig {
            block_capacity: s.inter.block_capacity,
            confirmation_depth: s.inter.confirmation_depth,
            target: match s.inter.mode {
                MiningKind::Virtual => Target::MAX,
                MiningKind::Puzzle => Target::from_expected_hashes(s.inter.expected_hashes),
            },
            block_reward: s.inter.block_reward,
            fee,
            ..InterConfig::default()
        };
        let mining_nodes = layout.delegates.values().map(Vec::len).sum::<usize>() + layout.miners.len();
        let mining = if mining_nodes == 0 {
            MiningMode::None
        } else {
            match s.inter.mode {
                MiningKind::Virtual => MiningMode::Virtual {
                    mean_interval_ms: s.inter.mean_block_interval_ms,
                    share: 1.0 / mining_nodes as f64,
                },
                MiningKind::Puzzle => {
                    let tick_ms = 100;
                    let per_tick = s.inter.expected_hashes as f64 * tick_ms as f64
                        / (s.inter.mean_block_interval_ms * mining_nodes as f64);
                    MiningMode::Puzzle {
                        batch: per_tick.round().max(1.0) as u64,
                        tick_ms,
                    }
                }
            }
        };
        let full = |id: NodeId, mode: MiningMode| {
            FullNode::new(
                keys[id].clone(),
                MinerState::new(addr(id), inter_cfg.clone(), keyring.clone(), genesis_world.clone()),
                dir.clone(),
                mode,
            )
        };
        for d in &s.domains {
            let z = d.zone_id;
            let info = dir.zone(z);
            for &id in &layout.delegates[&z] {
                let replica =
                    IntraReplica::new(z, info.committee.clone(), info.f, keyring.clone(), domain_genesis(z));
                let node = full(id, mining).with_delegate(z, replica);
                // Delegates sit inside their domain's network.
                expect_id(sim.add_node(z, Box::new(node)), id);
            }
        }
        for &id in &layout.miners {
            expect_id(sim.add_node(PUBLIC_ZONE, Box::new(full(id, mining))), id);
        }
        expect_id(
            sim.add_node(PUBLIC_ZONE, Box::new(full(layout.admin, MiningMode::None).with_admin())),
            layout.admin,
        );
        expect_id(
            sim.add_node(PUBLIC_ZONE, Box::new(full(layout.auditor, MiningMode::None).with_auditor())),
            layout.auditor,
        );

        let mut payload_rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x7061_796c_6f61_6473);
        for (i, (p, n)) in plans.iter().zip(&layout.sessions).enumerate() {
            for (side, id, zone, proceed) in [
                (Side::Publisher, n.seller, p.seller_zone, p.data_delivered),
                (Side::Subscriber, n.buyer, p.buyer_zone, p.buyer_ready),
            ] {
                let mut requirements = vec![0u8; p.payload_bytes];
                payload_rng.fill_bytes(&mut requirements);
                let info = dir.zone(zone);
                let spec = SessionSpec {
                    id: session_id(i),
                    side,
                    zone,
                    key: keys[id].clone(),
                    requirements,
                    service_ref: service_ref(i),
                    price: p.deposit,
                    start_ms: p.start,
                    proceed,
                };
                let replica =
                    IntraReplica::new(zone, info.committee.clone(), info.f, keyring.clone(), domain_genesis(zone));
                let client = SessionClient::new(spec, dir.clone(), replica);
                expect_id(sim.add_node(zone, Box::new(client)), id);
            }
        }
        for (id, cfg, start, stop) in intra_load_cfg {
            let LoadConfig::Intra { zone, .. } = cfg else { unreachable!() };
            let client = LoadClient::new(keys[id].clone(), cfg, dir.clone(), start, stop);
            expect_id(sim.add_node(zone, Box::new(client)), id);
        }
        for (id, cfg, start, stop, _) in inter_load_cfg {
            let client = LoadClient::new(keys[id].clone(), cfg, dir.clone(), start, stop);
            expect_id(sim.add_node(PUBLIC_ZONE, Box::new(client)), id);
        }

        let mut byzantine = HashSet::new();
        for f in &s.faults {
            let node = f.target.as_ref().map_or(0, |t| layout.names[t]);
            let fault = match f.kind {
                FaultKind::Crash => Fault::Crash,
                FaultKind::Recover => Fault::Recover,
                FaultKind::Equivocate => Fault::Byzantine { behavior: Behavior::Equivocate },
                FaultKind::Silent => Fault::Byzantine { behavior: Behavior::Silent },
                FaultKind::Delay => {
                    let zone_timeout = s
                        .domains
                        .iter()
                        .find(|d| layout.validators[&d.zone_id].contains(&node))
                        .map(|d| d.round_timeout_ms);
                    let hold_ms = f
                        .hold_ms
                        .unwrap_or_else(|| zone_timeout.unwrap_or(s.request_timeout_ms()).saturating_sub(1));
                    Fault::Byzantine { behavior: Behavior::Delay { hold_ms } }
                }
                FaultKind::Partition => {
                    let [a, b] = f.groups.as_ref().expect("validated");
                    Fault::Partition {
                        a: a.iter().map(|n| layout.names[n]).collect(),
                        b: b.iter().map(|n| layout.names[n]).collect(),
                    }
                }
                FaultKind::Heal => Fault::Heal,
            };
            if matches!(fault, Fault::Byzantine { .. }) {
                byzantine.insert(node);
            }
            sim.schedule_fault(FaultEntry { at: f.at_ms, node, fault })?;
        }

        let privacy = s.privacy_scan.then(|| {
            let scanner = Rc::new(RefCell::new(PrivacyScanner::new()));
            let tap = scanner.clone();
            sim.set_tap(Box::new(move |at, from, to, class, msg| {
                tap.borrow_mut().observe(at, from, to, class, msg)
            }));
            scanner
        });

        log::debug!(
            "seed {}: {} nodes, {} sessions, {} contracts",
            s.seed,
            next,
            layout.sessions.len(),
            s.contract_count()
        );
        Ok(World {
            scenario: s.clone(),
            sim,
            layout,
            genesis,
            privacy,
            byzantine,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn sim(&self) -> &Simulator<Msg, Event> {
        &self.sim
    }

    pub fn now(&self) -> Millis {
        self.sim.now()
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.layout.names.get(name).copied()
    }

    pub fn run_until(&mut self, t: Millis) -> Result<u64, SimError> {
        self.sim.run_until(t.min(self.scenario.duration_ms))
    }

    pub fn inject(&mut self, node: NodeId, fault: Fault) -> Result<(), SimError> {
        self.sim.inject_fault(node, fault)
    }

    pub fn client(&self, session: usize, side: Side) -> &SessionClient {
        let n = self.layout.sessions[session];
        let id = match side {
            Side::Publisher => n.seller,
            Side::Subscriber => n.buyer,
        };
        self.sim.inspect::<SessionClient>(id).expect("session client")
    }

    pub fn full_node(&self, id: NodeId) -> &FullNode {
        self.sim.inspect::<FullNode>(id).expect("full node")
    }

    pub fn validator(&self, id: NodeId) -> &ValidatorNode {
        self.sim.inspect::<ValidatorNode>(id).expect("validator")
    }

    /// Runs to the scenario's end and produces the report and log.
    pub fn finish(mut self) -> Result<RunOutput, SimError> {
        self.sim.run_until(self.scenario.duration_ms)?;
        let records = self.sim.take_records();
        log::debug!("seed {}: {} records, {:?}", self.scenario.seed, records.len(), self.sim.stats());
        let mut log = EventLog::new();
        log.push(0, self.layout.auditor, &self.genesis);
        for r in &records {
            log.push(r.at, r.node, &r.event);
        }
        let mut privacy_violations = 0;
        if let Some(p) = &self.privacy {
            let p = p.borrow();
            privacy_violations = p.leaks().len() as u64;
            for (at, e) in p.records() {
                log.push(at, self.layout.auditor, &e);
            }
        }
        let mut report = self.measure(&records);
        report.privacy_violations = privacy_violations;
        report.events = log.len();
        let (bytes, digest) = log.finish();
        report.event_log_digest = digest;
        Ok(RunOutput { report, log: bytes })
    }

    fn honest_validators(&self, zone: ZoneId) -> Vec<&ValidatorNode> {
        self.layout.validators[&zone]
            .iter()
            .filter(|id| !self.byzantine.contains(id))
            .map(|&id| self.validator(id))
            .collect()
    }

    fn measure(&self, records: &[crate::sim::Record<Event>]) -> MetricsReport {
        let s = &self.scenario;
        let secs = s.duration_ms as f64 / 1000.0;
        let mut intra = Vec::new();
        let mut intra_conflicts = 0;
        let mut conservation_delta: i64 = 0;
        for d in &s.domains {
            let z = d.zone_id;
            let honest = self.honest_validators(z);
            let Some(reference) = honest.iter().max_by_key(|v| v.consensus().ledger().tip_height()) else {
                continue;
            };
            let tip = reference.consensus().ledger().tip_height();
            let mut first_commit = vec![Millis::MAX; tip as usize + 1];
            for h in 1..=tip {
                let digests: HashSet<_> = honest
                    .iter()
                    .filter_map(|v| v.consensus().ledger().block_digest(h))
                    .collect();
                if digests.len() > 1 {
                    intra_conflicts += 1;
                }
                for v in &honest {
                    if let Some(t) = v.commit_time(h) {
                        if v.consensus().ledger().block_digest(h).is_some() {
                            first_commit[h as usize] = first_commit[h as usize].min(t);
                        }
                    }
                }
            }
            let ledger = reference.consensus().ledger();
            let mut samples = Vec::new();
            let mut uncommitted = 0;
            for (lz, id) in &self.layout.intra_load {
                if *lz != z {
                    continue;
                }
                let load = self.sim.inspect::<LoadClient>(*id).expect("load client");
                for (tx, at) in load.submitted() {
                    match ledger.locate(tx) {
                        Some(loc) => samples.push(first_commit[loc.height as usize].saturating_sub(*at)),
                        None => uncommitted += 1,
                    }
                }
            }
            let late_rounds = ledger
                .blocks()
                .filter(|(b, _)| matches!(b.seal, Seal::Bft { round, .. } if round > 0))
                .count() as u64;
            let tx_count = ledger.tx_count() as u64;
            let interval = if tip > 1 {
                (first_commit[tip as usize] - first_commit[1]) as f64 / (tip - 1) as f64 / 1000.0
            } else {
                0.0
            };
            let domain = reference.domain();
            conservation_delta += domain.total().0 as i64 - domain.supply().0 as i64;
            let equivocations = records
                .iter()
                .filter(|r| matches!(r.event, Event::Equivocation { zone, .. } if zone == z))
                .count() as u64;
            intra.push(IntraMetrics {
                zone: z,
                tx_count,
                tx_throughput: tx_count as f64 / secs,
                commit_latency: LatencyStats::from_millis(&samples),
                block_count: tip,
                mean_block_interval_s: interval,
                late_rounds,
                uncommitted,
                equivocations,
            });
        }

        let auditor = self.full_node(self.layout.auditor);
        let miner = auditor.miner();
        let tip_state = miner.tip_state();
        let chain = miner.chain();
        let mut samples = Vec::new();
        for id in &self.layout.inter_load {
            let load = self.sim.inspect::<LoadClient>(*id).expect("load client");
            for (tx, at) in load.submitted() {
                if let Some(t) = auditor.confirm_times().get(tx) {
                    samples.push(t.saturating_sub(*at));
                }
            }
        }
        let mut mined_per_node = Vec::new();
        for id in self.layout.delegates.values().flatten().chain(&self.layout.miners) {
            mined_per_node.push(self.full_node(*id).blocks_mined());
        }
        let mined_total: u64 = mined_per_node.iter().sum();
        let tx_count = chain.tx_count() as u64;
        let inter = InterMetrics {
            tx_count,
            tx_throughput: tx_count as f64 / secs,
            commit_latency: LatencyStats::from_millis(&samples),
            block_count: chain.tip_height(),
            confirmed_height: miner.confirmed_height(),
            stale_blocks: mined_total.saturating_sub(chain.tip_height()),
            reorgs: miner.reorg_count(),
            reverted_confirmed: miner.reverted_confirmed(),
            mined_per_node,
        };
        let held: u64 = tip_state.balances().values().map(|a| a.0).sum::<u64>() + tip_state.escrow_total().0;
        conservation_delta += held as i64 - tip_state.supply().0 as i64;

        let mut sessions = Vec::new();
        let mut payment_violations = 0;
        let mut double_payouts = 0;
        let mut paid_unsettled = 0;
        for (i, n) in self.layout.sessions.iter().enumerate() {
            let seller = self.client(i, Side::Publisher);
            let buyer = self.client(i, Side::Subscriber);
            let contract = seller
                .checkpoint()
                .and_then(|cp| tip_state.contracts().find(|c| c.tx_refs.contains(&cp)));
            let paid = contract.is_some_and(|c| c.broker_status == BrokerStatus::Paid);
            let dual = contract.is_some_and(|c| c.pub_committed && c.sub_committed);
            let payments = seller.payments().len() as u64;
            if payments > 1 {
                double_payouts += payments - 1;
                payment_violations += 1;
            }
            if (paid && !dual) || (payments > 0 && !paid) {
                payment_violations += 1;
            }
            if paid && payments == 0 {
                paid_unsettled += 1;
            }
            let outcome = match (seller.phase(), buyer.phase()) {
                (Phase::Settled, Phase::Settled) => "settled",
                (Phase::Failed, _) | (_, Phase::Failed) => "failed",
                _ => "incomplete",
            };
            let completed_ms = (outcome == "settled").then(|| {
                seller.phase_times()[&Phase::Settled].max(buyer.phase_times()[&Phase::Settled])
            });
            sessions.push(SessionReport {
                session: n.id,
                outcome: outcome.to_string(),
                contract_id: contract.map(|c| c.contract_id).or(seller.contract()).or(buyer.contract()),
                contract_status: contract.map(|c| c.broker_status),
                dual_commit: dual,
                seller_payments: payments,
                started_ms: seller.spec().start_ms,
                completed_ms,
                seller: side_report(seller),
                buyer: side_report(buyer),
            });
        }

        MetricsReport {
            seed: s.seed,
            duration_ms: s.duration_ms,
            intra,
            inter,
            sessions,
            safety_violations: intra_conflicts + payment_violations,
            intra_conflicts,
            payment_violations,
            double_payouts,
            paid_unsettled,
            conservation_delta,
            privacy_violations: 0,
            equivocated_messages: self.sim.stats().equivocated,
            events: 0,
            event_log_digest: Digest::ZERO,
        }
    }
}

fn side_report(c: &SessionClient) -> SideReport {
    SideReport {
        side: c.spec().side,
        zone: c.spec().zone,
        address: c.address(),
        phase: c.phase(),
        reason: c.fail_reason(),
        phase_times_ms: c.phase_times().clone(),
        failovers: c.failovers().iter().map(|(at, _, to)| (*at, *to)).collect(),
    }
}

/// Builds and runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, BuildError> {
    Ok(World::build(scenario)?.finish()?)
}
