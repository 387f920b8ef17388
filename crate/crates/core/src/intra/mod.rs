//! Permissioned domain ledgers: BFT consensus plus balance execution.

mod consensus;
mod domain;
mod mempool;

pub use consensus::{
    CommittedBlock, ConsensusConfig, ConsensusError, ConsensusMsg, Evidence, MsgKind, Output,
    Proposal, Step, Timeout, TimeoutKind, ValidatorState, DEFAULT_BLOCK_CAPACITY,
    DEFAULT_ROUND_TIMEOUT_MS,
};
pub use domain::{DomainState, IntraReceipt};
pub use mempool::Mempool;
