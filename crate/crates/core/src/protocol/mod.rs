//! Federation node roles and the four-phase cross-domain exchange.
//!
//! A seller and a buyer in different domains trade a data service through
//! their delegates: a data publisher (DP) for the seller and a data
//! subscriber (DS) for the buyer. Delegates are inter-ledger miners that
//! also follow their own domain's ledger. The phases are
//!
//! 1. delegation: the client records its requirements on the domain ledger
//!    and hands the resulting checkpoint to the first delegate of its zone;
//! 2. configuration: both delegates bind the same contract, the DS
//!    depositing the buyer's payment as escrow;
//! 3. commitment: each side confirms delivery / readiness;
//! 4. payment: the escrow is released to the DP, which pays the seller on
//!    the domain ledger.
//!
//! Clients detect a dead delegate by missing keepalives and move to the
//! next one in their zone's delegation list. When a contract is already
//! bound to the dead delegate, the federation admin rebinds it.

mod client;
mod delegate;
mod directory;
mod event;
mod fullnode;
mod message;
mod replica;
mod validator;

pub use client::{LoadClient, LoadConfig, SessionClient, SessionSpec};
pub use delegate::{cross_verify, delegate_verify};
pub use directory::{Directory, ZoneInfo};
pub use event::{CallRecord, Event, FailReason, Phase, TransferRecord};
pub use fullnode::{FullNode, MiningMode};
pub use message::{DelegationRequest, DenyReason, Msg, ProtoMsg, SessionInfo};
pub use replica::{IntraReplica, MemoTransfer};
pub use validator::ValidatorNode;

use crate::sim::{Ctx, Record};

pub type NodeCtx<'a> = Ctx<'a, Msg, Event>;
pub type EventRecord = Record<Event>;
