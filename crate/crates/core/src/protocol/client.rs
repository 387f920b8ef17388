use std::any::Any;
use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};

use super::directory::Directory;
use super::event::{Event, FailReason, Phase};
use super::message::{DelegationRequest, DenyReason, Msg, ProtoMsg, SessionInfo};
use super::replica::IntraReplica;
use super::NodeCtx;
use crate::amount::Amount;
use crate::contract::{BrokerStatus, ContractCall, Side};
use crate::crypto::{Address, Digest, Keypair};
use crate::inter::{InterTx, NATIVE_CONTRACT};
use crate::ledger::{make_checkpoint, Checkpoint, IntraTx, LedgerTx, Transfer, ZoneId};
use crate::sim::{Millis, NodeId, Process};

const TAG_START: u64 = 1;
const TAG_INTRA_DEADLINE: u64 = 2;
const TAG_REQUEST_DEADLINE: u64 = 3;
const TAG_TICK: u64 = 4;

/// One side of an exchange, as configured by the scenario.
#[derive(Clone, Debug)]
pub struct SessionSpec {
    pub id: Digest,
    pub side: Side,
    pub zone: ZoneId,
    pub key: Keypair,
    pub requirements: Vec<u8>,
    pub service_ref: Digest,
    pub price: Amount,
    pub start_ms: Millis,
    /// Seller: data delivered. Buyer: ready to pay.
    pub proceed: bool,
}

/// Seller or buyer: a light client of its domain that drives one exchange
/// through a delegate.
pub struct SessionClient {
    spec: SessionSpec,
    address: Address,
    dir: Arc<Directory>,
    replica: IntraReplica,
    phase: Phase,
    reason: Option<FailReason>,
    delegate_idx: usize,
    requirement_tx: Option<Digest>,
    checkpoint: Option<Checkpoint>,
    funding_sent: bool,
    contract: Option<u64>,
    last_heard: Millis,
    waiting: bool,
    nonce: u64,
    phase_times: BTreeMap<Phase, Millis>,
    failovers: Vec<(Millis, Address, Address)>,
    payments: Vec<Digest>,
    verify_query: u64,
}

impl SessionClient {
    pub fn new(spec: SessionSpec, dir: Arc<Directory>, replica: IntraReplica) -> Self {
        let address = spec.key.address();
        Self {
            spec,
            address,
            dir,
            replica,
            phase: Phase::Idle,
            reason: None,
            delegate_idx: 0,
            requirement_tx: None,
            checkpoint: None,
            funding_sent: false,
            contract: None,
            last_heard: 0,
            waiting: false,
            nonce: 0,
            phase_times: BTreeMap::new(),
            failovers: Vec::new(),
            payments: Vec::new(),
            verify_query: 0,
        }
    }

    pub fn spec(&self) -> &SessionSpec {
        &self.spec
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn fail_reason(&self) -> Option<FailReason> {
        self.reason
    }

    pub fn phase_times(&self) -> &BTreeMap<Phase, Millis> {
        &self.phase_times
    }

    /// `(at, abandoned delegate, successor)` for each failover.
    pub fn failovers(&self) -> &[(Millis, Address, Address)] {
        &self.failovers
    }

    /// Payments to this seller carrying the session memo.
    pub fn payments(&self) -> &[Digest] {
        &self.payments
    }

    pub fn contract(&self) -> Option<u64> {
        self.contract
    }

    pub fn replica(&self) -> &IntraReplica {
        &self.replica
    }

    pub fn checkpoint(&self) -> Option<Checkpoint> {
        self.checkpoint
    }

    /// The delegate currently serving this client.
    pub fn current_delegate(&self) -> Option<(NodeId, Address)> {
        self.delegate()
    }

    fn delegate(&self) -> Option<(NodeId, Address)> {
        self.dir
            .zone(self.spec.zone)
            .delegates
            .get(self.delegate_idx)
            .copied()
    }

    fn set_phase(&mut self, ctx: &mut NodeCtx<'_>, phase: Phase, reason: Option<FailReason>) {
        if self.phase.is_terminal() || phase <= self.phase {
            return;
        }
        self.phase = phase;
        self.reason = reason;
        self.phase_times.insert(phase, ctx.now());
        ctx.emit(Event::PhaseChange {
            session: self.spec.id,
            side: self.spec.side,
            phase,
            reason,
        });
        if phase.is_terminal() {
            self.waiting = false;
            if let Some((node, _)) = self.delegate() {
                self.send(ctx, node, ProtoMsg::Done { session: self.spec.id });
            }
        }
    }

    fn fail(&mut self, ctx: &mut NodeCtx<'_>, reason: FailReason) {
        self.set_phase(ctx, Phase::Failed, Some(reason));
    }

    fn send(&self, ctx: &mut NodeCtx<'_>, to: NodeId, msg: ProtoMsg) {
        ctx.emit(Event::Message {
            session: msg.session(),
            from: ctx.me(),
            to,
            msg: msg.kind().to_string(),
        });
        ctx.send(to, Msg::Proto(msg));
    }

    fn submit_intra(&mut self, ctx: &mut NodeCtx<'_>, payload: Vec<u8>) -> Digest {
        let tx = IntraTx::new(&self.spec.key, self.spec.zone, payload, self.nonce)
            .expect("payload within limit");
        self.nonce += 1;
        let d = tx.digest();
        let batch = Arc::new(vec![tx]);
        for v in self.dir.zone(self.spec.zone).validators.clone() {
            ctx.send(v, Msg::IntraSubmit(batch.clone()));
        }
        d
    }

    fn request_delegation(&mut self, ctx: &mut NodeCtx<'_>, takeover: bool) {
        let Some((node, _)) = self.delegate() else {
            self.fail(ctx, FailReason::NoDelegates);
            return;
        };
        let cp = self.checkpoint.expect("checkpoint before delegation");
        let info = Arc::new(SessionInfo {
            id: self.spec.id,
            side: self.spec.side,
            requester: self.address,
            zone: self.spec.zone,
            checkpoint: cp,
            service_ref: self.spec.service_ref,
            price: self.spec.price,
        });
        let req = DelegationRequest::new(&self.spec.key, info, takeover);
        self.send(ctx, node, ProtoMsg::Delegate(req));
        self.last_heard = ctx.now();
        if !self.waiting {
            self.waiting = true;
            ctx.timer(self.dir.request_timeout_ms, TAG_REQUEST_DEADLINE);
        }
    }

    fn failover(&mut self, ctx: &mut NodeCtx<'_>) {
        let from = self.delegate().map(|d| d.1).unwrap_or_default();
        self.delegate_idx += 1;
        let Some((_, to)) = self.delegate() else {
            self.fail(ctx, FailReason::NoDelegates);
            return;
        };
        self.failovers.push((ctx.now(), from, to));
        ctx.emit(Event::Failover {
            session: self.spec.id,
            side: self.spec.side,
            from,
            to,
        });
        self.request_delegation(ctx, true);
    }

    fn on_blocks(&mut self, ctx: &mut NodeCtx<'_>) {
        if self.checkpoint.is_none() {
            if let Some(d) = self.requirement_tx {
                if let Some(loc) = self.replica.ledger().locate(&d) {
                    let body = self.replica.ledger().body(loc.height).expect("located");
                    let tx = &body[loc.position as usize];
                    self.checkpoint = make_checkpoint(tx, self.replica.ledger()).ok();
                    if self.checkpoint.is_some() && !self.phase.is_terminal() {
                        self.request_delegation(ctx, false);
                    }
                }
            }
        }
        if self.spec.side == Side::Publisher {
            let fresh: Vec<_> = self
                .replica
                .transfers_with_memo(&self.spec.id)
                .iter()
                .filter(|t| t.to == self.address && !self.payments.contains(&t.tx))
                .copied()
                .collect();
            for t in fresh {
                self.payments.push(t.tx);
                ctx.emit(Event::SellerPaid {
                    session: self.spec.id,
                    seller: self.address,
                    from: t.from,
                    amount: t.amount,
                    tx: t.tx,
                });
                self.set_phase(ctx, Phase::Settled, None);
            }
        }
    }

    fn on_proto(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, msg: ProtoMsg) {
        if self.delegate().map(|d| d.0) != Some(from) {
            return;
        }
        if let Some(s) = msg.session() {
            if s != self.spec.id {
                return;
            }
        }
        ctx.emit(Event::Message {
            session: msg.session(),
            from,
            to: ctx.me(),
            msg: msg.kind().to_string(),
        });
        self.last_heard = ctx.now();
        match msg {
            ProtoMsg::Ack { .. } => {
                self.set_phase(ctx, Phase::Delegated, None);
                if self.spec.side == Side::Subscriber && !self.funding_sent {
                    self.funding_sent = true;
                    let (_, delegate) = self.delegate().expect("acked by a delegate");
                    let t = Transfer {
                        to: delegate,
                        amount: self.spec.price,
                        memo: self.spec.id,
                    };
                    self.submit_intra(ctx, t.to_payload());
                }
            }
            ProtoMsg::Deny { reason, .. } => match reason {
                DenyReason::UnknownIdentity => self.fail(ctx, FailReason::UnknownIdentity),
                DenyReason::BadCheckpoint => self.fail(ctx, FailReason::BadCheckpoint),
                DenyReason::NoContract => self.fail(ctx, FailReason::NoContract),
                DenyReason::InvalidState => {}
            },
            ProtoMsg::Notify {
                contract_id,
                status,
                counterpart,
                ..
            } => {
                self.contract = Some(contract_id);
                if status >= BrokerStatus::Configured {
                    self.set_phase(ctx, Phase::Configured, None);
                    if let Some(cp) = counterpart {
                        self.verify_query += 1;
                        self.send(
                            ctx,
                            from,
                            ProtoMsg::VerifyCheckpoint {
                                query: self.verify_query,
                                checkpoint: cp,
                            },
                        );
                    }
                    // Requests are idempotent; repeating them on every notice
                    // covers a successor that has not notified us yet.
                    if self.spec.proceed && status == BrokerStatus::Configured {
                        self.send(ctx, from, ProtoMsg::CommitRequest { session: self.spec.id });
                    }
                }
                if status >= BrokerStatus::Committed {
                    self.set_phase(ctx, Phase::Committed, None);
                    self.send(ctx, from, ProtoMsg::SettleRequest { session: self.spec.id });
                }
            }
            ProtoMsg::Receipt { .. } => {
                if self.spec.side == Side::Subscriber {
                    self.set_phase(ctx, Phase::Settled, None);
                }
            }
            ProtoMsg::VerifyReply { valid, .. } => {
                ctx.emit(Event::CrossVerified {
                    session: self.spec.id,
                    valid,
                });
            }
            _ => {}
        }
    }
}

impl Process<Msg, Event> for SessionClient {
    fn on_start(&mut self, ctx: &mut NodeCtx<'_>) {
        ctx.timer(self.spec.start_ms.saturating_sub(ctx.now()), TAG_START);
    }

    fn on_message(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, msg: Msg) {
        match msg {
            Msg::IntraCommitted(c) => {
                if !self.replica.ingest(c, ctx.now()).is_empty() {
                    self.on_blocks(ctx);
                }
            }
            Msg::Proto(p) => self.on_proto(ctx, from, p),
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, tag: u64) {
        match tag {
            TAG_START => {
                if self.phase != Phase::Idle || self.requirement_tx.is_some() {
                    return;
                }
                if self.spec.side == Side::Subscriber
                    && self.replica.state().balance(&self.address) < self.spec.price
                {
                    self.fail(ctx, FailReason::InsufficientFunds);
                    return;
                }
                let payload = self.spec.requirements.clone();
                self.requirement_tx = Some(self.submit_intra(ctx, payload));
                ctx.timer(self.dir.intra_timeout_ms, TAG_INTRA_DEADLINE);
            }
            TAG_INTRA_DEADLINE => {
                if self.checkpoint.is_none() {
                    self.fail(ctx, FailReason::IntraTimeout);
                }
            }
            TAG_REQUEST_DEADLINE => {
                if !self.waiting || self.phase.is_terminal() {
                    self.waiting = false;
                    return;
                }
                let deadline = self.last_heard + self.dir.request_timeout_ms;
                if ctx.now() >= deadline {
                    self.failover(ctx);
                    if !self.phase.is_terminal() {
                        ctx.timer(self.dir.request_timeout_ms, TAG_REQUEST_DEADLINE);
                    }
                } else {
                    ctx.timer(deadline - ctx.now(), TAG_REQUEST_DEADLINE);
                }
            }
            _ => {}
        }
    }

    fn on_recover(&mut self, ctx: &mut NodeCtx<'_>) {
        if self.waiting {
            self.last_heard = ctx.now();
            ctx.timer(self.dir.request_timeout_ms, TAG_REQUEST_DEADLINE);
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Synthetic transaction source for throughput and latency runs.
#[derive(Clone, Debug)]
pub enum LoadConfig {
    /// Domain transactions. `rate_per_s > 0` gives an open-loop Poisson
    /// source; otherwise `window` transactions are kept in flight.
    Intra {
        zone: ZoneId,
        rate_per_s: f64,
        window: usize,
        payload_bytes: usize,
    },
    /// Open-loop Poisson stream of native inter-ledger transfers.
    Inter { rate_per_s: f64 },
}

pub struct LoadClient {
    key: Keypair,
    cfg: LoadConfig,
    dir: Arc<Directory>,
    tick_ms: Millis,
    start_ms: Millis,
    stop_ms: Millis,
    nonce: u64,
    in_flight: HashSet<Digest>,
    submitted: Vec<(Digest, Millis)>,
    next_peer: usize,
}

impl LoadClient {
    pub fn new(key: Keypair, cfg: LoadConfig, dir: Arc<Directory>, start_ms: Millis, stop_ms: Millis) -> Self {
        Self {
            key,
            cfg,
            dir,
            tick_ms: 10,
            start_ms,
            stop_ms,
            nonce: 0,
            in_flight: HashSet::new(),
            submitted: Vec::new(),
            next_peer: 0,
        }
    }

    pub fn address(&self) -> Address {
        self.key.address()
    }

    /// Every transaction this client issued with its submission time.
    pub fn submitted(&self) -> &[(Digest, Millis)] {
        &self.submitted
    }

    fn make_intra(&mut self, ctx: &mut NodeCtx<'_>, zone: ZoneId, payload_bytes: usize) -> IntraTx {
        let mut payload = vec![0u8; payload_bytes];
        ctx.rng().fill_bytes(&mut payload);
        let tx = IntraTx::new(&self.key, zone, payload, self.nonce).expect("payload within limit");
        self.nonce += 1;
        self.submitted.push((tx.digest(), ctx.now()));
        tx
    }

    fn send_intra(&mut self, ctx: &mut NodeCtx<'_>, zone: ZoneId, txs: Vec<IntraTx>) {
        if txs.is_empty() {
            return;
        }
        let batch = Arc::new(txs);
        for v in self.dir.zone(zone).validators.clone() {
            ctx.send(v, Msg::IntraSubmit(batch.clone()));
        }
    }

    fn poisson(ctx: &mut NodeCtx<'_>, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        Poisson::new(mean).map_or(0, |p| p.sample(ctx.rng()) as u64)
    }

    fn tick(&mut self, ctx: &mut NodeCtx<'_>) {
        let mean = match &self.cfg {
            LoadConfig::Intra { rate_per_s, .. } | LoadConfig::Inter { rate_per_s } => {
                rate_per_s * self.tick_ms as f64 / 1000.0
            }
        };
        let n = Self::poisson(ctx, mean);
        match self.cfg.clone() {
            LoadConfig::Intra {
                zone,
                payload_bytes,
                ..
            } => {
                let txs = (0..n)
                    .map(|_| self.make_intra(ctx, zone, payload_bytes))
                    .collect();
                self.send_intra(ctx, zone, txs);
            }
            LoadConfig::Inter { .. } => {
                let peers = self.dir.full_nodes.clone();
                for _ in 0..n {
                    let tx = InterTx::new(
                        &self.key,
                        NATIVE_CONTRACT,
                        ContractCall::Transfer { to: self.key.address() },
                        Amount(1),
                        None,
                        self.nonce,
                    );
                    self.nonce += 1;
                    self.submitted.push((tx.digest(), ctx.now()));
                    let tx = Arc::new(tx);
                    // Everyone hears about it directly; no relay needed.
                    for p in &peers {
                        ctx.send(*p, Msg::InterTx(tx.clone()));
                    }
                    self.next_peer = (self.next_peer + 1) % peers.len().max(1);
                }
            }
        }
        if ctx.now() + self.tick_ms < self.stop_ms {
            ctx.timer(self.tick_ms, TAG_TICK);
        }
    }

    fn is_open_loop(&self) -> bool {
        match &self.cfg {
            LoadConfig::Intra { rate_per_s, .. } => *rate_per_s > 0.0,
            LoadConfig::Inter { .. } => true,
        }
    }

    fn refill(&mut self, ctx: &mut NodeCtx<'_>) {
        let LoadConfig::Intra {
            zone,
            window,
            payload_bytes,
            ..
        } = self.cfg.clone()
        else {
            return;
        };
        if ctx.now() >= self.stop_ms {
            return;
        }
        let mut txs = Vec::new();
        while self.in_flight.len() < window {
            let tx = self.make_intra(ctx, zone, payload_bytes);
            self.in_flight.insert(tx.digest());
            txs.push(tx);
        }
        self.send_intra(ctx, zone, txs);
    }
}

impl Process<Msg, Event> for LoadClient {
    fn on_start(&mut self, ctx: &mut NodeCtx<'_>) {
        // Jitter the first tick so many clients do not fire in lockstep.
        let jitter = ctx.rng().gen_range(0..self.tick_ms);
        ctx.timer(self.start_ms.saturating_sub(ctx.now()) + jitter, TAG_START);
    }

    fn on_message(&mut self, ctx: &mut NodeCtx<'_>, _from: NodeId, msg: Msg) {
        if let Msg::IntraCommitted(c) = msg {
            if self.is_open_loop() || self.in_flight.is_empty() {
                return;
            }
            let before = self.in_flight.len();
            for tx in &c.txs {
                if tx.sender == self.key.address() {
                    self.in_flight.remove(&tx.digest());
                }
            }
            if self.in_flight.len() < before {
                self.refill(ctx);
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, tag: u64) {
        match tag {
            TAG_START if self.is_open_loop() => self.tick(ctx),
            TAG_START => self.refill(ctx),
            TAG_TICK => self.tick(ctx),
            _ => {}
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
