use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chain::Ledger;
use super::tx::{IntraTx, LedgerTx, ZoneId};
use crate::codec::{Decoder, DecodeError, Encode, Encoder};
use crate::crypto::Digest;

/// Public proof that a private domain transaction was committed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Checkpoint {
    pub zone_id: ZoneId,
    pub tx_ref: Digest,
    pub block_height: u64,
    /// Digest of the block that contains the transaction.
    pub ledger_head: Digest,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("transaction {0:?} is not committed in this ledger")]
pub struct NotCommitted(pub Digest);

impl Encode for Checkpoint {
    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.zone_id)
            .put(&self.tx_ref)
            .u64(self.block_height)
            .put(&self.ledger_head);
    }
}

impl Checkpoint {
    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            zone_id: dec.u32()?,
            tx_ref: Digest::decode(dec)?,
            block_height: dec.u64()?,
            ledger_head: Digest::decode(dec)?,
        })
    }
}

pub fn make_checkpoint(tx: &IntraTx, ledger: &Ledger<IntraTx>) -> Result<Checkpoint, NotCommitted> {
    let tx_ref = tx.digest();
    let loc = ledger.locate(&tx_ref).ok_or(NotCommitted(tx_ref))?;
    let ledger_head = ledger
        .block_digest(loc.height)
        .expect("indexed height exists");
    Ok(Checkpoint {
        zone_id: tx.zone_id,
        tx_ref,
        block_height: loc.height,
        ledger_head,
    })
}

/// `true` iff the ledger holds `tx_ref` at `block_height` and the block
/// there hashes to `ledger_head`. Heights past the tip simply fail.
pub fn verify_checkpoint(cp: &Checkpoint, ledger: &Ledger<IntraTx>) -> bool {
    let Some(loc) = ledger.locate(&cp.tx_ref) else {
        return false;
    };
    loc.height == cp.block_height && ledger.block_digest(cp.block_height) == Some(cp.ledger_head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, Address, Keypair};
    use crate::ledger::block::{tx_root, Block, Seal};
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seal(round: u32) -> Seal {
        Seal::Bft {
            proposer: Address::ZERO,
            round,
            quorum: vec![],
        }
    }

    fn push(l: &mut Ledger<IntraTx>, txs: Vec<IntraTx>, ts: u64) {
        let b = Block {
            parent: l.tip_digest(),
            height: l.tip_height() + 1,
            tx_root: tx_root(txs.iter().map(|t| t.digest())),
            timestamp: ts,
            seal: seal(0),
        };
        l.append(b, txs).unwrap();
    }

    fn tx(kp: &Keypair, n: u64) -> IntraTx {
        IntraTx::new(kp, 1, format!("requirement {n}").into_bytes(), n).unwrap()
    }

    #[test]
    fn checkpoint_at_height_five() {
        let kp = Keypair::from_seed(b"seller");
        let mut l = Ledger::new(Block::genesis_bft());
        for i in 0..4 {
            push(&mut l, vec![tx(&kp, i)], i);
        }
        let target = tx(&kp, 99);
        push(&mut l, vec![target.clone()], 10);
        let cp = make_checkpoint(&target, &l).unwrap();
        assert_eq!(
            cp,
            Checkpoint {
                zone_id: 1,
                tx_ref: hash(&target.to_bytes()),
                block_height: 5,
                ledger_head: l.block(5).unwrap().digest(),
            }
        );
        assert!(verify_checkpoint(&cp, &l));
    }

    #[test]
    fn absent_transaction_not_committed() {
        let kp = Keypair::from_seed(b"seller");
        let l = Ledger::new(Block::genesis_bft());
        let t = tx(&kp, 1);
        assert_eq!(make_checkpoint(&t, &l), Err(NotCommitted(t.digest())));
    }

    #[test]
    fn mutated_fields_fail_verification() {
        let kp = Keypair::from_seed(b"seller");
        let mut l = Ledger::new(Block::genesis_bft());
        let t = tx(&kp, 1);
        push(&mut l, vec![t.clone()], 1);
        let cp = make_checkpoint(&t, &l).unwrap();
        let mut bad = cp;
        bad.tx_ref.0[0] ^= 1;
        assert!(!verify_checkpoint(&bad, &l));
        let mut bad = cp;
        bad.block_height = 7;
        assert!(!verify_checkpoint(&bad, &l));
    }

    #[test]
    fn stale_head_from_forked_history_fails() {
        let kp = Keypair::from_seed(b"seller");
        let t = tx(&kp, 1);
        let mut a = Ledger::new(Block::genesis_bft());
        let mut b = Ledger::new(Block::genesis_bft());
        push(&mut a, vec![tx(&kp, 50)], 1);
        push(&mut b, vec![tx(&kp, 60)], 1);
        push(&mut a, vec![t.clone()], 2);
        push(&mut b, vec![t.clone()], 2);
        let from_a = make_checkpoint(&t, &a).unwrap();
        let from_b = make_checkpoint(&t, &b).unwrap();
        assert_eq!(from_a.tx_ref, from_b.tx_ref);
        assert_eq!(from_a.block_height, from_b.block_height);
        assert!(verify_checkpoint(&from_a, &a));
        assert!(!verify_checkpoint(&from_a, &b));
    }

    #[test]
    fn height_beyond_tip_is_false() {
        let kp = Keypair::from_seed(b"seller");
        let mut l = Ledger::new(Block::genesis_bft());
        let t = tx(&kp, 1);
        push(&mut l, vec![t.clone()], 1);
        let mut cp = make_checkpoint(&t, &l).unwrap();
        cp.block_height = 1_000;
        assert!(!verify_checkpoint(&cp, &l));
    }

    #[test]
    fn distinct_transactions_have_distinct_refs() {
        // brute-force batch of 10^4 random transactions
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kp = Keypair::from_seed(b"batch");
        let mut refs = std::collections::HashSet::new();
        for n in 0..10_000u64 {
            let mut payload = vec![0u8; rng.gen_range(0..64)];
            rng.fill_bytes(&mut payload);
            let t = IntraTx::new(&kp, 1, payload, n).unwrap();
            assert!(refs.insert(t.digest()));
        }
    }

    #[test]
    fn checkpoint_decode_round_trip() {
        let cp = Checkpoint {
            zone_id: 3,
            tx_ref: hash(b"a"),
            block_height: 9,
            ledger_head: hash(b"b"),
        };
        let bytes = cp.to_bytes();
        let mut dec = Decoder::new(&bytes);
        assert_eq!(Checkpoint::decode(&mut dec).unwrap(), cp);
        dec.finish().unwrap();
    }
}
