//! Transaction, block and checkpoint data model plus hash-linked storage,
//! shared by both consensus tiers.

mod block;
mod chain;
mod checkpoint;
mod tx;

pub use block::{precommit_bytes, tx_root, Block, QuorumVote, Seal, Target};
pub use chain::{Ledger, LedgerError, TxLocation};
pub use checkpoint::{make_checkpoint, verify_checkpoint, Checkpoint, NotCommitted};
pub use tx::{IntraTx, LedgerTx, Transfer, TxError, ZoneId, MAX_PAYLOAD};
