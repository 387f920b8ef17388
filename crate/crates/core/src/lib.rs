//! Deterministic simulator and protocol library for a two-tier federated
//! ledger: BFT-finalized private ledgers per domain, a proof-of-work public
//! ledger federating them, and an escrowed data-service exchange contract.

pub mod amount;
pub mod codec;
pub mod contract;
pub mod crypto;
pub mod inter;
pub mod intra;
pub mod protocol;
pub mod harness;
pub mod ledger;
pub mod sim;

pub use amount::Amount;
pub use crypto::{hash, Address, Digest, Keypair, Keyring, Signature, Verifier};
pub use ledger::{Block, Checkpoint, IntraTx, Ledger, ZoneId};
