use std::collections::HashMap;

use thiserror::Error;

use super::block::{tx_root, Block};
use super::tx::LedgerTx;
use crate::crypto::Digest;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("block parent {got:?} does not match tip {expected:?}")]
    BadParent { expected: Digest, got: Digest },
    #[error("block height {got} does not follow tip height {tip}")]
    BadHeight { tip: u64, got: u64 },
    #[error("tx root does not match the block body")]
    BadTxRoot,
    #[error("transaction {0:?} is already committed")]
    DuplicateTx(Digest),
}

/// Where a transaction sits in a ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxLocation {
    pub height: u64,
    pub position: u32,
}

/// Hash-linked block sequence with a transaction index.
#[derive(Clone, Debug)]
pub struct Ledger<T> {
    blocks: Vec<Block>,
    digests: Vec<Digest>,
    bodies: Vec<Vec<T>>,
    tx_index: HashMap<Digest, TxLocation>,
}

impl<T: LedgerTx> Ledger<T> {
    pub fn new(genesis: Block) -> Self {
        Self {
            digests: vec![genesis.digest()],
            blocks: vec![genesis],
            bodies: vec![Vec::new()],
            tx_index: HashMap::new(),
        }
    }

    pub fn tip_height(&self) -> u64 {
        (self.blocks.len() - 1) as u64
    }

    /// Number of blocks including genesis.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("ledger always holds genesis")
    }

    pub fn tip_digest(&self) -> Digest {
        *self.digests.last().expect("ledger always holds genesis")
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn block_digest(&self, height: u64) -> Option<Digest> {
        self.digests.get(height as usize).copied()
    }

    pub fn body(&self, height: u64) -> Option<&[T]> {
        self.bodies.get(height as usize).map(Vec::as_slice)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&Block, &[T])> {
        self.blocks.iter().zip(self.bodies.iter().map(Vec::as_slice))
    }

    pub fn locate(&self, tx: &Digest) -> Option<TxLocation> {
        self.tx_index.get(tx).copied()
    }

    pub fn contains_tx(&self, tx: &Digest) -> bool {
        self.tx_index.contains_key(tx)
    }

    pub fn tx_count(&self) -> usize {
        self.tx_index.len()
    }

    /// Checks linkage, height and tx root, then appends.
    pub fn append(&mut self, block: Block, txs: Vec<T>) -> Result<Digest, LedgerError> {
        let tip = self.tip_digest();
        if block.parent != tip {
            return Err(LedgerError::BadParent {
                expected: tip,
                got: block.parent,
            });
        }
        if block.height != self.tip_height() + 1 {
            return Err(LedgerError::BadHeight {
                tip: self.tip_height(),
                got: block.height,
            });
        }
        if block.tx_root != tx_root(txs.iter().map(LedgerTx::digest)) {
            return Err(LedgerError::BadTxRoot);
        }
        let mut seen = std::collections::HashSet::with_capacity(txs.len());
        for tx in &txs {
            let d = tx.digest();
            if self.tx_index.contains_key(&d) || !seen.insert(d) {
                return Err(LedgerError::DuplicateTx(d));
            }
        }
        let height = block.height;
        for (position, tx) in txs.iter().enumerate() {
            self.tx_index.insert(
                tx.digest(),
                TxLocation {
                    height,
                    position: position as u32,
                },
            );
        }
        let digest = block.digest();
        self.digests.push(digest);
        self.blocks.push(block);
        self.bodies.push(txs);
        Ok(digest)
    }

    /// Drops every block above `height`, returning their bodies in chain
    /// order. Only the fork-choice path of the inter-ledger uses this.
    pub(crate) fn truncate(&mut self, height: u64) -> Vec<(Block, Vec<T>)> {
        let keep = height as usize + 1;
        let mut removed = Vec::new();
        while self.blocks.len() > keep {
            let block = self.blocks.pop().expect("len > keep");
            let body = self.bodies.pop().expect("bodies track blocks");
            self.digests.pop();
            for tx in &body {
                self.tx_index.remove(&tx.digest());
            }
            removed.push((block, body));
        }
        removed.reverse();
        removed
    }

    /// Recomputes every link and index entry; `true` if consistent.
    pub fn audit(&self) -> bool {
        for h in 1..self.blocks.len() {
            let b = &self.blocks[h];
            if b.parent != self.digests[h - 1] || b.height != h as u64 {
                return false;
            }
            if b.tx_root != tx_root(self.bodies[h].iter().map(LedgerTx::digest)) {
                return false;
            }
            if self.digests[h] != b.digest() {
                return false;
            }
        }
        let indexed: usize = self.bodies.iter().map(Vec::len).sum();
        indexed == self.tx_index.len()
            && self.tx_index.iter().all(|(d, loc)| {
                self.bodies
                    .get(loc.height as usize)
                    .and_then(|b| b.get(loc.position as usize))
                    .is_some_and(|tx| tx.digest() == *d)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keypair;
    use crate::ledger::block::Seal;
    use crate::ledger::tx::IntraTx;

    fn tx(n: u64) -> IntraTx {
        IntraTx::new(&Keypair::from_seed(b"k"), 1, n.to_be_bytes().to_vec(), n).unwrap()
    }

    fn child(l: &Ledger<IntraTx>, txs: &[IntraTx]) -> Block {
        Block {
            parent: l.tip_digest(),
            height: l.tip_height() + 1,
            tx_root: tx_root(txs.iter().map(|t| t.digest())),
            timestamp: 0,
            seal: Seal::Bft {
                proposer: crate::crypto::Address::ZERO,
                round: 0,
                quorum: vec![],
            },
        }
    }

    #[test]
    fn append_indexes_transactions() {
        let mut l = Ledger::new(Block::genesis_bft());
        let txs = vec![tx(1), tx(2)];
        l.append(child(&l, &txs), txs.clone()).unwrap();
        assert_eq!(
            l.locate(&txs[1].digest()),
            Some(TxLocation {
                height: 1,
                position: 1
            })
        );
        assert!(l.audit());
    }

    #[test]
    fn rejects_wrong_parent_height_and_root() {
        let mut l = Ledger::new(Block::genesis_bft());
        let txs = vec![tx(1)];
        let mut b = child(&l, &txs);
        b.parent = Digest([1; 32]);
        assert!(matches!(
            l.append(b, txs.clone()),
            Err(LedgerError::BadParent { .. })
        ));
        let mut b = child(&l, &txs);
        b.height = 5;
        assert!(matches!(
            l.append(b, txs.clone()),
            Err(LedgerError::BadHeight { .. })
        ));
        let b = child(&l, &txs);
        assert_eq!(l.append(b, vec![tx(9)]), Err(LedgerError::BadTxRoot));
        assert_eq!(l.tip_height(), 0);
    }

    #[test]
    fn duplicate_transaction_rejected() {
        let mut l = Ledger::new(Block::genesis_bft());
        let txs = vec![tx(1)];
        l.append(child(&l, &txs), txs.clone()).unwrap();
        let b = child(&l, &txs);
        assert!(matches!(
            l.append(b, txs.clone()),
            Err(LedgerError::DuplicateTx(_))
        ));
    }

    #[test]
    fn truncate_unindexes() {
        let mut l = Ledger::new(Block::genesis_bft());
        for i in 0..3 {
            let txs = vec![tx(i)];
            l.append(child(&l, &txs), txs).unwrap();
        }
        let removed = l.truncate(1);
        assert_eq!(removed.len(), 2);
        assert_eq!(removed[0].0.height, 2);
        assert_eq!(l.tip_height(), 1);
        assert!(!l.contains_tx(&tx(2).digest()));
        assert!(l.audit());
    }
}
