use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::tx::{InterTx, NATIVE_CONTRACT};
use crate::amount::Amount;
use crate::codec::Encoder;
use crate::contract::{BrokerInfo, ContractCall, ContractError, Effect};
use crate::crypto::{hash, Address, Digest};
use crate::ledger::LedgerTx;

/// Why an included transaction's call did not take effect. The fee is
/// charged regardless.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq, Serialize)]
pub enum CallError {
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("sender cannot cover the attached value")]
    InsufficientFunds,
    #[error("call is not valid for the target contract")]
    BadCall,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InterReceipt {
    pub tx: Digest,
    pub sender: Address,
    pub contract_id: u64,
    pub method: &'static str,
    pub result: Result<Effect, CallError>,
}

/// Block-level execution failure; the block is invalid.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("sender {0} cannot pay the transaction fee")]
    FeeUnpaid(Address),
}

/// Inter-ledger account balances and deployed contracts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorldState {
    balances: BTreeMap<Address, Amount>,
    contracts: BTreeMap<u64, BrokerInfo>,
    supply: Amount,
    fees: Amount,
    minted: Amount,
}

impl WorldState {
    pub fn new(
        balances: impl IntoIterator<Item = (Address, Amount)>,
        contracts: impl IntoIterator<Item = BrokerInfo>,
    ) -> Self {
        let mut b = BTreeMap::new();
        for (a, v) in balances {
            *b.entry(a).or_insert(Amount::ZERO) += v;
        }
        let supply = b.values().sum();
        Self {
            balances: b,
            contracts: contracts.into_iter().map(|c| (c.contract_id, c)).collect(),
            supply,
            fees: Amount::ZERO,
            minted: Amount::ZERO,
        }
    }

    pub fn balance(&self, a: &Address) -> Amount {
        self.balances.get(a).copied().unwrap_or_default()
    }

    pub fn balances(&self) -> &BTreeMap<Address, Amount> {
        &self.balances
    }

    pub fn contract(&self, id: u64) -> Option<&BrokerInfo> {
        self.contracts.get(&id)
    }

    pub fn contracts(&self) -> impl Iterator<Item = &BrokerInfo> {
        self.contracts.values()
    }

    /// Initial supply plus any block rewards.
    pub fn supply(&self) -> Amount {
        self.supply + self.minted
    }

    /// Cumulative fees paid to miners (already inside miner balances).
    pub fn fees_paid(&self) -> Amount {
        self.fees
    }

    pub fn escrow_total(&self) -> Amount {
        self.contracts.values().map(|c| c.escrow).sum()
    }

    /// Balances plus escrow equal supply; every contract is internally consistent.
    pub fn conserved(&self) -> bool {
        self.balances.values().sum::<Amount>() + self.escrow_total() == self.supply()
            && self.contracts.values().all(BrokerInfo::invariants_hold)
    }

    pub fn digest(&self) -> Digest {
        let mut enc = Encoder::new();
        enc.u32(self.balances.len() as u32);
        for (a, v) in &self.balances {
            enc.put(a).put(v);
        }
        enc.u32(self.contracts.len() as u32);
        for c in self.contracts.values() {
            enc.put(c);
        }
        enc.put(&self.fees).put(&self.minted);
        hash(&enc.finish())
    }

    fn credit(&mut self, to: Address, v: Amount) {
        *self.balances.entry(to).or_insert(Amount::ZERO) += v;
    }

    fn debit(&mut self, from: &Address, v: Amount) -> bool {
        match self.balance(from).checked_sub(v) {
            Some(rest) => {
                self.balances.insert(*from, rest);
                true
            }
            None => false,
        }
    }

    /// Charges the fee to `miner`, then runs the call. Fails only when the
    /// fee itself cannot be paid.
    pub fn apply_tx(&mut self, tx: &InterTx, miner: Address) -> Result<InterReceipt, ExecError> {
        if !self.debit(&tx.sender, tx.fee) {
            return Err(ExecError::FeeUnpaid(tx.sender));
        }
        self.credit(miner, tx.fee);
        self.fees += tx.fee;
        let result = self.run_call(tx);
        Ok(InterReceipt {
            tx: tx.digest(),
            sender: tx.sender,
            contract_id: tx.contract_id,
            method: tx.call.method(),
            result,
        })
    }

    fn run_call(&mut self, tx: &InterTx) -> Result<Effect, CallError> {
        if self.balance(&tx.sender) < tx.attached_value {
            return Err(CallError::InsufficientFunds);
        }
        if tx.contract_id == NATIVE_CONTRACT {
            let ContractCall::Transfer { to } = tx.call else {
                return Err(CallError::BadCall);
            };
            self.debit(&tx.sender, tx.attached_value);
            self.credit(to, tx.attached_value);
            return Ok(Effect::None);
        }
        if matches!(tx.call, ContractCall::Transfer { .. }) {
            return Err(CallError::BadCall);
        }
        let contract = self
            .contracts
            .get_mut(&tx.contract_id)
            .ok_or(ContractError::UnknownContract)?;
        let mut next = contract.clone();
        let effect = next.dispatch(tx.sender, &tx.call, tx.checkpoint.as_ref(), tx.attached_value)?;
        *contract = next;
        match effect {
            Effect::None => {}
            Effect::Deposit(v) => {
                self.debit(&tx.sender, v);
            }
            Effect::Payout { to, amount } => self.credit(to, amount),
        }
        Ok(effect)
    }

    /// Executes a block body in order; on error the state is left unchanged.
    pub fn apply_block<T: AsRef<InterTx>>(
        &mut self,
        txs: &[T],
        miner: Address,
        reward: Amount,
    ) -> Result<Vec<InterReceipt>, ExecError> {
        let mut next = self.clone();
        let receipts = txs
            .iter()
            .map(|tx| next.apply_tx(tx.as_ref(), miner))
            .collect::<Result<Vec<_>, _>>()?;
        if !reward.is_zero() {
            next.credit(miner, reward);
            next.minted += reward;
        }
        *self = next;
        Ok(receipts)
    }
}

impl AsRef<InterTx> for InterTx {
    fn as_ref(&self) -> &InterTx {
        self
    }
}
