use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::directory::{Directory, ZoneInfo};
use super::event::Event;
use super::message::{DelegationRequest, DenyReason, ProtoMsg, SessionInfo};
use super::replica::IntraReplica;
use crate::amount::Amount;
use crate::contract::{BrokerInfo, BrokerStatus, ContractCall, Side};
use crate::crypto::{hash_parts, Address, Digest, Keypair, Keyring};
use crate::inter::{InterTx, MinerState};
use crate::ledger::{verify_checkpoint, Checkpoint, IntraTx, LedgerTx, Transfer};
use crate::sim::{Millis, NodeId};

/// Domain heights a successor waits before paying a seller, so a payment
/// its crashed predecessor already issued has time to show up.
const TAKEOVER_GRACE_HEIGHTS: u64 = 3;
const REPLACE_RETRY_MS: Millis = 10_000;

/// Identity and checkpoint checks a delegate runs on a request.
pub fn delegate_verify(
    zone: &ZoneInfo,
    replica: &IntraReplica,
    req: &DelegationRequest,
    keyring: &Keyring,
) -> Result<(), DenyReason> {
    let info = &req.info;
    if info.zone != zone.zone_id || !zone.is_member(&info.requester) || !req.verify(keyring) {
        return Err(DenyReason::UnknownIdentity);
    }
    let cp = &info.checkpoint;
    if cp.zone_id != zone.zone_id || !verify_checkpoint(cp, replica.ledger()) {
        return Err(DenyReason::BadCheckpoint);
    }
    let loc = replica.ledger().locate(&cp.tx_ref).ok_or(DenyReason::BadCheckpoint)?;
    let tx = &replica.ledger().body(loc.height).expect("located")[loc.position as usize];
    if tx.sender != info.requester {
        return Err(DenyReason::BadCheckpoint);
    }
    Ok(())
}

/// `true` iff some confirmed contract record anchors `cp`.
pub fn cross_verify(miner: &MinerState, cp: &Checkpoint) -> bool {
    miner
        .confirmed_state()
        .contracts()
        .any(|c| c.tx_refs.contains(cp))
}

/// Side effects requested by the delegate logic; the hosting full node
/// carries them out.
#[derive(Debug)]
pub(crate) enum Action {
    Send(NodeId, ProtoMsg),
    Inter(InterTx),
    Intra(IntraTx),
    Emit(Event),
}

struct Session {
    info: Arc<SessionInfo>,
    client: NodeId,
    /// Replica height when this delegate took over from a predecessor.
    takeover_at: Option<u64>,
    commit_requested: bool,
    settle_requested: bool,
    inflight: Option<Digest>,
    notified: Option<BrokerStatus>,
    payment: Option<IntraTx>,
    receipt_sent: bool,
}

pub(crate) struct DelegateRole {
    key: Keypair,
    address: Address,
    dir: Arc<Directory>,
    zone: ZoneInfo,
    replica: IntraReplica,
    sessions: BTreeMap<Digest, Session>,
    deferred: Vec<(NodeId, DelegationRequest)>,
    synced: bool,
    replace_asked: HashMap<(u64, Address), Millis>,
    inter_nonce: u64,
    intra_nonce: u64,
    pub out: Vec<Action>,
}

impl DelegateRole {
    pub fn new(key: Keypair, dir: Arc<Directory>, zone: ZoneInfo, replica: IntraReplica) -> Self {
        Self {
            address: key.address(),
            key,
            dir,
            zone,
            replica,
            sessions: BTreeMap::new(),
            deferred: Vec::new(),
            synced: true,
            replace_asked: HashMap::new(),
            inter_nonce: 0,
            intra_nonce: 0,
            out: Vec::new(),
        }
    }

    pub fn replica(&self) -> &IntraReplica {
        &self.replica
    }

    pub fn replica_mut(&mut self) -> &mut IntraReplica {
        &mut self.replica
    }

    /// Whether the replica is known to be current. Seller payments wait for it.
    pub fn set_synced(&mut self, synced: bool) {
        self.synced = synced;
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn clients(&self) -> impl Iterator<Item = (Digest, NodeId)> + '_ {
        self.sessions.iter().map(|(id, s)| (*id, s.client))
    }

    fn send(&mut self, to: NodeId, msg: ProtoMsg) {
        self.out.push(Action::Send(to, msg));
    }

    pub fn on_request(&mut self, from: NodeId, msg: ProtoMsg, miner: &MinerState, now: Millis) {
        match msg {
            ProtoMsg::Delegate(req) => self.on_delegate(from, req, miner, now),
            ProtoMsg::CommitRequest { session } => {
                let Some(s) = self.sessions.get_mut(&session) else {
                    return;
                };
                if s.notified.is_none_or(|st| st < BrokerStatus::Configured) {
                    self.send(
                        from,
                        ProtoMsg::Deny {
                            session,
                            reason: DenyReason::InvalidState,
                        },
                    );
                    return;
                }
                s.commit_requested = true;
                self.drive(session, miner, now);
            }
            ProtoMsg::SettleRequest { session } => {
                let Some(s) = self.sessions.get_mut(&session) else {
                    return;
                };
                if s.notified.is_none_or(|st| st < BrokerStatus::Committed) {
                    self.send(
                        from,
                        ProtoMsg::Deny {
                            session,
                            reason: DenyReason::InvalidState,
                        },
                    );
                    return;
                }
                s.settle_requested = true;
                self.drive(session, miner, now);
            }
            ProtoMsg::Done { session } => {
                self.sessions.remove(&session);
            }
            ProtoMsg::VerifyCheckpoint { query, checkpoint } => {
                let valid = cross_verify(miner, &checkpoint);
                self.send(from, ProtoMsg::VerifyReply { query, valid });
            }
            _ => {}
        }
    }

    fn on_delegate(&mut self, from: NodeId, req: DelegationRequest, miner: &MinerState, now: Millis) {
        let session = req.info.id;
        if req.info.checkpoint.block_height > self.replica.height()
            && req.info.zone == self.zone.zone_id
        {
            // Our replica lags the client's; retry once it catches up.
            self.deferred.push((from, req));
            return;
        }
        if let Err(reason) = delegate_verify(&self.zone, &self.replica, &req, &self.dir.keyring) {
            self.send(from, ProtoMsg::Deny { session, reason });
            return;
        }
        let height = self.replica.height();
        let s = self.sessions.entry(session).or_insert_with(|| Session {
            info: req.info.clone(),
            client: from,
            takeover_at: None,
            commit_requested: false,
            settle_requested: false,
            inflight: None,
            notified: None,
            payment: None,
            receipt_sent: false,
        });
        s.client = from;
        if req.takeover && s.takeover_at.is_none() {
            s.takeover_at = Some(height);
        }
        self.send(from, ProtoMsg::Ack { session });
        self.drive(session, miner, now);
    }

    /// Called after new domain blocks reached the replica.
    pub fn on_replica_update(&mut self, miner: &MinerState, now: Millis) {
        let deferred = std::mem::take(&mut self.deferred);
        for (from, req) in deferred {
            self.on_delegate(from, req, miner, now);
        }
        self.drive_all(miner, now);
    }

    pub fn keepalive(&mut self) {
        let clients: Vec<_> = self.clients().collect();
        for (session, client) in clients {
            self.send(client, ProtoMsg::Keepalive { session });
        }
    }

    pub fn drive_all(&mut self, miner: &MinerState, now: Millis) {
        let ids: Vec<_> = self.sessions.keys().copied().collect();
        for id in ids {
            self.drive(id, miner, now);
        }
    }

    fn funded(&self, info: &SessionInfo) -> bool {
        self.replica
            .transfers_with_memo(&info.id)
            .iter()
            .any(|t| {
                t.from == info.requester
                    && t.amount >= info.price
                    && self.zone.delegates.iter().any(|(_, a)| *a == t.to)
            })
    }

    fn submit(&mut self, session: Digest, contract_id: u64, call: ContractCall, value: Amount, cp: Option<Checkpoint>) -> Digest {
        let method = call.method().to_string();
        let tx = InterTx::new(&self.key, contract_id, call, value, cp, self.inter_nonce);
        self.inter_nonce += 1;
        let d = tx.digest();
        self.out.push(Action::Emit(Event::InterSubmitted {
            session,
            tx: d,
            method,
            contract_id,
        }));
        self.out.push(Action::Inter(tx));
        d
    }

    /// Level-triggered: looks at the current chain, domain replica and
    /// client requests, and issues whatever step is due next.
    fn drive(&mut self, id: Digest, miner: &MinerState, now: Millis) {
        let Some(s) = self.sessions.get(&id) else {
            return;
        };
        let info = s.info.clone();
        let client = s.client;

        if let Some(tx) = s.inflight {
            let included = miner.locate(&tx).is_some();
            if included || !miner.is_pending(&tx) {
                self.sessions.get_mut(&id).expect("present").inflight = None;
            }
        }

        let tip = miner.tip_state();
        let bound = bound_contract(tip.contracts(), &info).map(|c| c.contract_id);
        let Some(cid) = bound else {
            if self.sessions[&id].inflight.is_some() {
                return;
            }
            if info.side == Side::Subscriber && !self.funded(&info) {
                return;
            }
            match pick_contract(&tip.contracts().collect::<Vec<_>>(), &info) {
                Some(cid) => {
                    let (call, value) = match info.side {
                        Side::Publisher => (
                            ContractCall::ConfigurePublisher {
                                service_ref: info.service_ref,
                            },
                            Amount::ZERO,
                        ),
                        Side::Subscriber => (
                            ContractCall::ConfigureSubscriber {
                                service_ref: info.service_ref,
                            },
                            info.price,
                        ),
                    };
                    let d = self.submit(id, cid, call, value, Some(info.checkpoint));
                    self.sessions.get_mut(&id).expect("present").inflight = Some(d);
                }
                None => {
                    self.send(
                        client,
                        ProtoMsg::Deny {
                            session: id,
                            reason: DenyReason::NoContract,
                        },
                    );
                    self.sessions.remove(&id);
                }
            }
            return;
        };

        let contract = tip.contract(cid).expect("bound contract exists");
        let party = contract.party(info.side);
        if party != self.address {
            let key = (cid, party);
            let due = self
                .replace_asked
                .get(&key)
                .is_none_or(|at| now >= at + REPLACE_RETRY_MS);
            if due {
                self.replace_asked.insert(key, now);
                let admin = self.dir.admin.0;
                self.send(
                    admin,
                    ProtoMsg::ReplaceRequest {
                        contract_id: cid,
                        old: party,
                        new: self.address,
                    },
                );
            }
            return;
        }

        self.notify(id, cid, miner);

        let s = self.sessions.get(&id).expect("present");
        if s.inflight.is_some() {
            return;
        }
        let contract = miner.tip_state().contract(cid).expect("bound contract exists");
        let mine_committed = match info.side {
            Side::Publisher => contract.pub_committed,
            Side::Subscriber => contract.sub_committed,
        };
        let call = if s.commit_requested
            && contract.broker_status == BrokerStatus::Configured
            && !mine_committed
        {
            Some(ContractCall::CommitService)
        } else if s.settle_requested && contract.broker_status == BrokerStatus::Committed {
            Some(ContractCall::SettlePayment)
        } else {
            None
        };
        if let Some(call) = call {
            let d = self.submit(id, cid, call, Amount::ZERO, None);
            self.sessions.get_mut(&id).expect("present").inflight = Some(d);
        }
    }

    /// Reports confirmed progress and runs the off-chain payout steps.
    fn notify(&mut self, id: Digest, cid: u64, miner: &MinerState) {
        let Some(c) = miner.confirmed_state().contract(cid) else {
            return;
        };
        let s = self.sessions.get(&id).expect("present");
        let info = s.info.clone();
        if !c.tx_refs.contains(&info.checkpoint) {
            return;
        }
        let status = c.broker_status;
        if status >= BrokerStatus::Configured && s.notified.is_none_or(|n| status > n) {
            let counterpart = c
                .tx_refs
                .iter()
                .find(|cp| **cp != info.checkpoint)
                .copied();
            let msg = ProtoMsg::Notify {
                session: id,
                contract_id: cid,
                status,
                broker_digest: c.digest(),
                counterpart,
            };
            let client = s.client;
            self.sessions.get_mut(&id).expect("present").notified = Some(status);
            self.out.push(Action::Emit(Event::ContractStatus {
                session: id,
                contract_id: cid,
                status,
            }));
            self.send(client, msg);
        }
        if status != BrokerStatus::Paid {
            return;
        }
        let amount = c.paid_out;
        match info.side {
            Side::Publisher => self.pay_seller(id, &info, amount),
            Side::Subscriber => {
                let s = self.sessions.get_mut(&id).expect("present");
                if s.settle_requested && !s.receipt_sent {
                    s.receipt_sent = true;
                    let client = s.client;
                    self.send(
                        client,
                        ProtoMsg::Receipt {
                            session: id,
                            contract_id: cid,
                            amount,
                        },
                    );
                }
            }
        }
    }

    fn pay_seller(&mut self, id: Digest, info: &SessionInfo, amount: Amount) {
        // A stale replica could miss a payment made by a successor.
        if !self.synced {
            return;
        }
        let already = self
            .replica
            .transfers_with_memo(&id)
            .iter()
            .any(|t| t.to == info.requester);
        if already {
            return;
        }
        let height = self.replica.height();
        let s = self.sessions.get_mut(&id).expect("present");
        if let Some(tx) = &s.payment {
            // Same transaction again; the ledger rejects duplicates.
            let tx = tx.clone();
            self.out.push(Action::Intra(tx));
            return;
        }
        if s.takeover_at.is_some_and(|h| height < h + TAKEOVER_GRACE_HEIGHTS) {
            return;
        }
        let payload = Transfer {
            to: info.requester,
            amount,
            memo: id,
        }
        .to_payload();
        let tx = IntraTx::new(&self.key, self.zone.zone_id, payload, self.intra_nonce)
            .expect("transfer payload fits");
        self.intra_nonce += 1;
        s.payment = Some(tx.clone());
        self.out.push(Action::Intra(tx));
    }
}

/// The contract already carrying this session's checkpoint, preferring
/// one that progressed past configuration.
fn bound_contract<'a>(
    contracts: impl Iterator<Item = &'a BrokerInfo>,
    info: &SessionInfo,
) -> Option<&'a BrokerInfo> {
    contracts
        .filter(|c| c.service_ref == info.service_ref && c.tx_refs.contains(&info.checkpoint))
        .max_by_key(|c| (c.broker_status, std::cmp::Reverse(c.contract_id)))
}

/// A contract the counterpart already configured for the same service, or
/// else the first free one in an order both sides compute identically.
fn pick_contract(contracts: &[&BrokerInfo], info: &SessionInfo) -> Option<u64> {
    if let Some(c) = contracts
        .iter()
        .filter(|c| c.awaits(info.side, &info.service_ref))
        .map(|c| c.contract_id)
        .min()
    {
        return Some(c);
    }
    contracts
        .iter()
        .filter(|c| c.is_free())
        .min_by_key(|c| hash_parts(&[info.service_ref.as_bytes(), &c.contract_id.to_be_bytes()]))
        .map(|c| c.contract_id)
}
