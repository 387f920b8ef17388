use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::contract::{BrokerStatus, Effect, Side};
use crate::crypto::{Address, Digest};
use crate::ledger::ZoneId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Idle,
    Delegated,
    Configured,
    Committed,
    Settled,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Settled | Phase::Failed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailReason {
    IntraTimeout,
    NoDelegates,
    NoContract,
    InsufficientFunds,
    UnknownIdentity,
    BadCheckpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub from: Address,
    pub to: Address,
    pub amount: Amount,
}

/// One executed inter-ledger contract call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tx: Digest,
    pub sender: Address,
    pub contract_id: u64,
    pub method: String,
    pub ok: bool,
    pub effect: Option<Effect>,
}

/// Structured log record. Protocol messages and state transitions are
/// logged individually; consensus traffic only as per-block summaries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// Token holdings at time zero, for replay-based checks.
    Genesis {
        inter_balances: Vec<(Address, Amount)>,
        domain_balances: Vec<(ZoneId, Vec<(Address, Amount)>)>,
        contracts: Vec<u64>,
    },
    IntraCommitted {
        zone: ZoneId,
        height: u64,
        block: Digest,
        round: u32,
        txs: u32,
        transfers: Vec<TransferRecord>,
    },
    Equivocation {
        zone: ZoneId,
        validator: Address,
        height: u64,
        round: u32,
    },
    InterMined {
        height: u64,
        block: Digest,
        txs: u32,
    },
    /// Reported by the auditor once a block reaches confirmation depth.
    InterConfirmed {
        height: u64,
        block: Digest,
        miner: Address,
        /// Fee paid per sender; the miner collects the sum.
        fee_payers: Vec<(Address, Amount)>,
        reward: Amount,
        calls: Vec<CallRecord>,
        transfers: Vec<TransferRecord>,
    },
    /// A confirmed block left the auditor's canonical chain.
    InterReverted {
        height: u64,
        block: Digest,
    },
    Message {
        session: Option<Digest>,
        from: usize,
        to: usize,
        msg: String,
    },
    PhaseChange {
        session: Digest,
        side: Side,
        phase: Phase,
        reason: Option<FailReason>,
    },
    Failover {
        session: Digest,
        side: Side,
        from: Address,
        to: Address,
    },
    InterSubmitted {
        session: Digest,
        tx: Digest,
        method: String,
        contract_id: u64,
    },
    SellerPaid {
        session: Digest,
        seller: Address,
        from: Address,
        amount: Amount,
        tx: Digest,
    },
    CrossVerified {
        session: Digest,
        valid: bool,
    },
    ContractStatus {
        session: Digest,
        contract_id: u64,
        status: BrokerStatus,
    },
    PrivacyViolation {
        from: usize,
        to: usize,
        msg: String,
        offset: u64,
    },
    PrivacyAudit {
        messages: u64,
        bytes: u64,
        payloads: u64,
        violations: u64,
    },
}
