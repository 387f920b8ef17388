use std::collections::BTreeMap;

use serde::Serialize;

use crate::amount::Amount;
use crate::crypto::{Address, Digest};
use crate::ledger::{IntraTx, LedgerTx, Transfer};

/// Outcome of executing one domain transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IntraReceipt {
    /// Opaque record; nothing to execute.
    Recorded,
    Transferred(Transfer),
    /// Transfer the sender could not cover; committed as a no-op.
    Failed,
}

/// Token balances of one domain, advanced block by block.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DomainState {
    balances: BTreeMap<Address, Amount>,
    supply: Amount,
}

impl DomainState {
    pub fn new(initial: impl IntoIterator<Item = (Address, Amount)>) -> Self {
        let mut balances = BTreeMap::new();
        for (a, v) in initial {
            *balances.entry(a).or_insert(Amount::ZERO) += v;
        }
        let supply = balances.values().sum();
        Self { balances, supply }
    }

    pub fn balance(&self, a: &Address) -> Amount {
        self.balances.get(a).copied().unwrap_or_default()
    }

    pub fn supply(&self) -> Amount {
        self.supply
    }

    pub fn total(&self) -> Amount {
        self.balances.values().sum()
    }

    pub fn apply(&mut self, tx: &IntraTx) -> IntraReceipt {
        let Some(t) = tx.transfer() else {
            return IntraReceipt::Recorded;
        };
        let from = self.balance(&tx.sender);
        let Some(rest) = from.checked_sub(t.amount) else {
            return IntraReceipt::Failed;
        };
        self.balances.insert(tx.sender, rest);
        *self.balances.entry(t.to).or_insert(Amount::ZERO) += t.amount;
        IntraReceipt::Transferred(t)
    }

    pub fn apply_block(&mut self, txs: &[IntraTx]) -> Vec<(Digest, IntraReceipt)> {
        txs.iter().map(|tx| (tx.digest(), self.apply(tx))).collect()
    }
}
