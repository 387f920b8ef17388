//! Public proof-of-work inter-ledger with contract execution.

mod attack;
mod miner;
mod state;
mod tx;

pub use miner::{
    sample_block_delay, Adoption, BlockError, InterConfig, MinerState, Rejection, BLOCK_CAPACITY,
    DEFAULT_CONFIRMATION_DEPTH, ORPHAN_LIMIT,
};
pub use attack::{analytic_success, double_spend_rate, private_fork_attempt, AttackOutcome};
pub use state::{CallError, ExecError, InterReceipt, WorldState};
pub use tx::{InterTx, InterTxRef, NATIVE_CONTRACT};
