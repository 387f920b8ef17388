use std::sync::Arc;

use serde::Serialize;

use crate::amount::Amount;
use crate::codec::{Encode, Encoder};
use crate::contract::{BrokerStatus, Side};
use crate::crypto::{Address, Digest, Keypair, Signature, Verifier};
use crate::inter::InterTxRef;
use crate::intra::{CommittedBlock, ConsensusMsg, MsgKind};
use crate::ledger::{Block, Checkpoint, IntraTx, ZoneId};

/// What a client tells its delegate about the exchange it wants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionInfo {
    pub id: Digest,
    pub side: Side,
    pub requester: Address,
    pub zone: ZoneId,
    /// Proof that the requirements were recorded on the domain ledger.
    pub checkpoint: Checkpoint,
    /// Digest both sides use to find the same contract.
    pub service_ref: Digest,
    /// Escrow the buyer funds; zero on the seller side.
    pub price: Amount,
}

impl Encode for SessionInfo {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.id)
            .u8(matches!(self.side, Side::Subscriber) as u8)
            .put(&self.requester)
            .u32(self.zone)
            .put(&self.checkpoint)
            .put(&self.service_ref)
            .put(&self.price);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelegationRequest {
    pub info: Arc<SessionInfo>,
    /// Sent to a successor after the previous delegate went silent.
    pub takeover: bool,
    pub signature: Signature,
}

impl DelegationRequest {
    pub fn new(key: &Keypair, info: Arc<SessionInfo>, takeover: bool) -> Self {
        let signature = key.sign(&info.to_bytes());
        Self {
            info,
            takeover,
            signature,
        }
    }

    pub fn verify(&self, verifier: &impl Verifier) -> bool {
        verifier.verify(&self.info.requester, &self.info.to_bytes(), &self.signature)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum DenyReason {
    UnknownIdentity,
    BadCheckpoint,
    InvalidState,
    NoContract,
}

/// Client/delegate/admin messages of the exchange.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtoMsg {
    Delegate(DelegationRequest),
    Ack {
        session: Digest,
    },
    Deny {
        session: Digest,
        reason: DenyReason,
    },
    /// Confirmed contract progress, with the record's digest as the
    /// client-side checkpoint of the broker data.
    Notify {
        session: Digest,
        contract_id: u64,
        status: BrokerStatus,
        broker_digest: Digest,
        counterpart: Option<Checkpoint>,
    },
    CommitRequest {
        session: Digest,
    },
    /// Seller asks for payment (also used as the buyer's receipt request).
    SettleRequest {
        session: Digest,
    },
    Receipt {
        session: Digest,
        contract_id: u64,
        amount: Amount,
    },
    Keepalive {
        session: Digest,
    },
    /// Client is finished; the delegate may forget the session.
    Done {
        session: Digest,
    },
    ReplaceRequest {
        contract_id: u64,
        old: Address,
        new: Address,
    },
    VerifyCheckpoint {
        query: u64,
        checkpoint: Checkpoint,
    },
    VerifyReply {
        query: u64,
        valid: bool,
    },
}

impl ProtoMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtoMsg::Delegate(_) => "delegate",
            ProtoMsg::Ack { .. } => "ack",
            ProtoMsg::Deny { .. } => "deny",
            ProtoMsg::Notify { .. } => "notify",
            ProtoMsg::CommitRequest { .. } => "commit_request",
            ProtoMsg::SettleRequest { .. } => "settle_request",
            ProtoMsg::Receipt { .. } => "receipt",
            ProtoMsg::Keepalive { .. } => "keepalive",
            ProtoMsg::Done { .. } => "done",
            ProtoMsg::ReplaceRequest { .. } => "replace_request",
            ProtoMsg::VerifyCheckpoint { .. } => "verify_checkpoint",
            ProtoMsg::VerifyReply { .. } => "verify_reply",
        }
    }

    pub fn session(&self) -> Option<Digest> {
        match self {
            ProtoMsg::Delegate(r) => Some(r.info.id),
            ProtoMsg::Ack { session }
            | ProtoMsg::Deny { session, .. }
            | ProtoMsg::Notify { session, .. }
            | ProtoMsg::CommitRequest { session }
            | ProtoMsg::SettleRequest { session }
            | ProtoMsg::Receipt { session, .. }
            | ProtoMsg::Keepalive { session }
            | ProtoMsg::Done { session } => Some(*session),
            _ => None,
        }
    }
}

impl Encode for ProtoMsg {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(self.kind());
        match self {
            ProtoMsg::Delegate(r) => {
                enc.put(r.info.as_ref()).bool(r.takeover).put(&r.signature);
            }
            ProtoMsg::Ack { session }
            | ProtoMsg::CommitRequest { session }
            | ProtoMsg::SettleRequest { session }
            | ProtoMsg::Keepalive { session }
            | ProtoMsg::Done { session } => {
                enc.put(session);
            }
            ProtoMsg::Deny { session, reason } => {
                enc.put(session).u8(*reason as u8);
            }
            ProtoMsg::Notify {
                session,
                contract_id,
                status,
                broker_digest,
                counterpart,
            } => {
                enc.put(session)
                    .u64(*contract_id)
                    .u8(*status as u8)
                    .put(broker_digest)
                    .option(counterpart.as_ref());
            }
            ProtoMsg::Receipt {
                session,
                contract_id,
                amount,
            } => {
                enc.put(session).u64(*contract_id).put(amount);
            }
            ProtoMsg::ReplaceRequest {
                contract_id,
                old,
                new,
            } => {
                enc.u64(*contract_id).put(old).put(new);
            }
            ProtoMsg::VerifyCheckpoint { query, checkpoint } => {
                enc.u64(*query).put(checkpoint);
            }
            ProtoMsg::VerifyReply { query, valid } => {
                enc.u64(*query).bool(*valid);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Msg {
    Consensus(ConsensusMsg),
    SyncRequest { height: u64 },
    SyncBlock(Arc<CommittedBlock>),
    IntraSubmit(Arc<Vec<IntraTx>>),
    IntraCommitted(Arc<CommittedBlock>),
    InterTx(InterTxRef),
    InterBlock { block: Block, txs: Arc<Vec<InterTxRef>> },
    GetBlock(Digest),
    Proto(ProtoMsg),
}

impl Msg {
    pub fn kind(&self) -> &'static str {
        match self {
            Msg::Consensus(_) => "consensus",
            Msg::SyncRequest { .. } => "sync_request",
            Msg::SyncBlock(_) => "sync_block",
            Msg::IntraSubmit(_) => "intra_submit",
            Msg::IntraCommitted(_) => "intra_committed",
            Msg::InterTx(_) => "inter_tx",
            Msg::InterBlock { .. } => "inter_block",
            Msg::GetBlock(_) => "get_block",
            Msg::Proto(p) => p.kind(),
        }
    }
}

fn encode_vote(enc: &mut Encoder, m: &ConsensusMsg) {
    let kind = match m.kind {
        MsgKind::Proposal => 0,
        MsgKind::Prevote => 1,
        MsgKind::Precommit => 2,
    };
    enc.u8(kind)
        .u64(m.height)
        .u32(m.round)
        .option(m.block_digest.as_ref())
        .put(&m.sender)
        .put(&m.signature);
}

fn encode_committed(enc: &mut Encoder, c: &CommittedBlock) {
    enc.u32(c.zone_id).put(&c.block).list(&c.txs);
}

impl Encode for Msg {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(self.kind());
        match self {
            Msg::Consensus(m) => {
                encode_vote(enc, m);
                match &m.proposal {
                    None => {
                        enc.u8(0);
                    }
                    Some(p) => {
                        enc.u8(1)
                            .put(&p.block)
                            .list(&p.txs)
                            .option(p.valid_round.as_ref())
                            .u32(p.pol.len() as u32);
                        for v in &p.pol {
                            encode_vote(enc, v);
                        }
                    }
                }
            }
            Msg::SyncRequest { height } => {
                enc.u64(*height);
            }
            Msg::SyncBlock(c) | Msg::IntraCommitted(c) => encode_committed(enc, c),
            Msg::IntraSubmit(txs) => {
                enc.list(txs);
            }
            Msg::InterTx(tx) => {
                enc.put(tx.as_ref());
            }
            Msg::InterBlock { block, txs } => {
                enc.put(block).list(txs);
            }
            Msg::GetBlock(d) => {
                enc.put(d);
            }
            Msg::Proto(p) => {
                enc.put(p);
            }
        }
    }
}
