use std::collections::{BTreeMap, HashMap};

use crate::crypto::Digest;
use crate::ledger::{IntraTx, LedgerTx};

/// Insertion-ordered transaction pool.
#[derive(Default)]
pub struct Mempool {
    next: u64,
    order: BTreeMap<u64, Digest>,
    txs: HashMap<Digest, (u64, IntraTx)>,
}

impl Mempool {
    pub fn insert(&mut self, tx: IntraTx) -> bool {
        let d = tx.digest();
        if self.txs.contains_key(&d) {
            return false;
        }
        self.order.insert(self.next, d);
        self.txs.insert(d, (self.next, tx));
        self.next += 1;
        true
    }

    pub fn remove(&mut self, d: &Digest) -> Option<IntraTx> {
        let (seq, tx) = self.txs.remove(d)?;
        self.order.remove(&seq);
        Some(tx)
    }

    pub fn contains(&self, d: &Digest) -> bool {
        self.txs.contains_key(d)
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    /// Oldest `n` transactions, oldest first.
    pub fn first(&self, n: usize) -> Vec<IntraTx> {
        self.order
            .values()
            .take(n)
            .map(|d| self.txs[d].1.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keypair;

    #[test]
    fn keeps_arrival_order() {
        let kp = Keypair::from_seed(b"m");
        let mut pool = Mempool::default();
        let txs: Vec<_> = (0..5)
            .map(|i| IntraTx::new(&kp, 1, vec![i as u8], i).unwrap())
            .collect();
        for tx in &txs {
            assert!(pool.insert(tx.clone()));
        }
        assert!(!pool.insert(txs[0].clone()));
        pool.remove(&txs[1].digest());
        let first = pool.first(2);
        assert_eq!(first, vec![txs[0].clone(), txs[2].clone()]);
        assert_eq!(pool.len(), 4);
    }
}
