use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;
use thiserror::Error;

use super::state::{ExecError, InterReceipt, WorldState};
use super::tx::{InterTx, InterTxRef, NATIVE_CONTRACT};
use crate::amount::Amount;
use crate::crypto::{Address, Digest, Keyring};
use crate::ledger::{tx_root, Block, Ledger, LedgerTx, Seal, Target, TxLocation};
use crate::sim::Millis;

/// Flat per-block transaction cap (block gas limit over the cost of a transfer).
pub const BLOCK_CAPACITY: usize = 571;
pub const DEFAULT_CONFIRMATION_DEPTH: u64 = 6;
pub const ORPHAN_LIMIT: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterConfig {
    pub block_capacity: usize,
    /// A transaction is confirmed once its block is this many blocks deep
    /// (the tip itself is depth 1).
    pub confirmation_depth: u64,
    pub target: Target,
    /// Optional subsidy per block; zero keeps the supply fixed.
    pub block_reward: Amount,
    pub orphan_limit: usize,
    /// Fixed fee every transaction must carry.
    pub fee: Amount,
}

impl Default for InterConfig {
    fn default() -> Self {
        Self {
            block_capacity: BLOCK_CAPACITY,
            confirmation_depth: DEFAULT_CONFIRMATION_DEPTH,
            target: Target::MAX,
            block_reward: Amount::ZERO,
            orphan_limit: ORPHAN_LIMIT,
            fee: Amount::INTER_FEE,
        }
    }
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq, Hash, Serialize)]
pub enum Rejection {
    #[error("signature does not verify")]
    BadSignature,
    #[error("sender balance below attached value plus fee")]
    InsufficientFunds,
    #[error("transaction already pending or on chain")]
    Duplicate,
    #[error("sender may not call an admin-only method")]
    Unauthorized,
    #[error("fee differs from the fixed transaction fee")]
    BadFee,
    #[error("no such contract")]
    UnknownContract,
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum BlockError {
    #[error("seal is not a valid proof of work for the configured target")]
    InvalidSeal,
    #[error("block exceeds the transaction cap")]
    OverCapacity,
    #[error("transaction root mismatch")]
    BadTxRoot,
    #[error("transaction signature does not verify")]
    BadSignature,
    #[error("height does not follow the parent")]
    BadHeight,
    #[error("transaction already on the branch")]
    DuplicateTx,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adoption {
    Duplicate,
    /// Parent unknown; buffered until it arrives.
    Orphaned,
    /// Valid but on a branch no longer than the current chain.
    Stored,
    /// Became the tip; `reorg_depth` blocks of the old chain were displaced.
    Adopted { reorg_depth: u64 },
}

struct Node {
    block: Block,
    txs: Arc<Vec<InterTxRef>>,
}

/// One miner's view of the inter-ledger: the block tree, the canonical
/// longest chain with per-height execution state, and the pending pool.
pub struct MinerState {
    pub miner_id: Address,
    cfg: InterConfig,
    verifier: Arc<Keyring>,
    tree: HashMap<Digest, Node>,
    chain: Ledger<InterTxRef>,
    states: Vec<WorldState>,
    receipts: Vec<Vec<InterReceipt>>,
    /// Highest fee first, then arrival order.
    pending: BTreeMap<(Reverse<Amount>, u64), InterTxRef>,
    pending_index: HashMap<Digest, (Reverse<Amount>, u64)>,
    next_seq: u64,
    orphans: VecDeque<(Block, Arc<Vec<InterTxRef>>)>,
    confirmed_height: u64,
    unreported: Vec<u64>,
    reverted_confirmed: u64,
    reorgs: u64,
    template: Option<(Block, Arc<Vec<InterTxRef>>)>,
}

impl MinerState {
    pub fn new(miner_id: Address, cfg: InterConfig, verifier: Arc<Keyring>, genesis: WorldState) -> Self {
        let g = Block::genesis_pow();
        let mut tree = HashMap::new();
        tree.insert(
            g.digest(),
            Node {
                block: g.clone(),
                txs: Arc::new(Vec::new()),
            },
        );
        Self {
            miner_id,
            cfg,
            verifier,
            tree,
            chain: Ledger::new(g),
            states: vec![genesis],
            receipts: vec![Vec::new()],
            pending: BTreeMap::new(),
            pending_index: HashMap::new(),
            next_seq: 0,
            orphans: VecDeque::new(),
            confirmed_height: 0,
            unreported: Vec::new(),
            reverted_confirmed: 0,
            reorgs: 0,
            template: None,
        }
    }

    pub fn config(&self) -> &InterConfig {
        &self.cfg
    }

    pub fn chain(&self) -> &Ledger<InterTxRef> {
        &self.chain
    }

    pub fn tip_height(&self) -> u64 {
        self.chain.tip_height()
    }

    pub fn tip_digest(&self) -> Digest {
        self.chain.tip_digest()
    }

    pub fn tip_state(&self) -> &WorldState {
        self.states.last().expect("genesis state")
    }

    pub fn state_at(&self, height: u64) -> Option<&WorldState> {
        self.states.get(height as usize)
    }

    /// State after the deepest block that is at least `k` deep.
    pub fn confirmed_state(&self) -> &WorldState {
        &self.states[self.confirmed_height as usize]
    }

    pub fn confirmed_height(&self) -> u64 {
        self.confirmed_height
    }

    pub fn receipts_at(&self, height: u64) -> &[InterReceipt] {
        self.receipts.get(height as usize).map_or(&[], Vec::as_slice)
    }

    pub fn is_pending(&self, tx: &Digest) -> bool {
        self.pending_index.contains_key(tx)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn orphan_count(&self) -> usize {
        self.orphans.len()
    }

    pub fn reorg_count(&self) -> u64 {
        self.reorgs
    }

    /// Confirmed heights later displaced by a reorg. Stays zero unless an
    /// attacker out-mines the honest miners.
    pub fn reverted_confirmed(&self) -> u64 {
        self.reverted_confirmed
    }

    pub fn known_blocks(&self) -> usize {
        self.tree.len()
    }

    pub fn block(&self, digest: &Digest) -> Option<(Block, Arc<Vec<InterTxRef>>)> {
        self.tree.get(digest).map(|n| (n.block.clone(), n.txs.clone()))
    }

    /// Location and depth of a transaction on the canonical chain.
    pub fn locate(&self, tx: &Digest) -> Option<(TxLocation, u64)> {
        self.chain
            .locate(tx)
            .map(|loc| (loc, self.tip_height() + 1 - loc.height))
    }

    pub fn receipt(&self, tx: &Digest) -> Option<&InterReceipt> {
        let loc = self.chain.locate(tx)?;
        self.receipts[loc.height as usize].get(loc.position as usize)
    }

    pub fn is_confirmed(&self, tx: &Digest) -> bool {
        self.chain
            .locate(tx)
            .is_some_and(|l| l.height <= self.confirmed_height)
    }

    /// Heights that became confirmed since the last call.
    pub fn take_confirmations(&mut self) -> Vec<u64> {
        std::mem::take(&mut self.unreported)
    }

    pub fn submit_inter_tx(&mut self, tx: InterTx) -> Result<(), Rejection> {
        self.admit(Arc::new(tx))
    }

    pub fn admit(&mut self, tx: InterTxRef) -> Result<(), Rejection> {
        let d = tx.digest();
        if self.pending_index.contains_key(&d) || self.chain.contains_tx(&d) {
            return Err(Rejection::Duplicate);
        }
        if !tx.verify(self.verifier.as_ref()) {
            return Err(Rejection::BadSignature);
        }
        if tx.fee != self.cfg.fee {
            return Err(Rejection::BadFee);
        }
        let state = self.tip_state();
        if tx.contract_id != NATIVE_CONTRACT {
            let c = state
                .contract(tx.contract_id)
                .ok_or(Rejection::UnknownContract)?;
            if tx.call.admin_gated() && c.admin != tx.sender {
                return Err(Rejection::Unauthorized);
            }
        }
        match tx.cost() {
            Some(cost) if state.balance(&tx.sender) >= cost => {}
            _ => return Err(Rejection::InsufficientFunds),
        }
        self.push_pending(tx);
        Ok(())
    }

    fn push_pending(&mut self, tx: InterTxRef) {
        let d = tx.digest();
        if self.pending_index.contains_key(&d) {
            return;
        }
        let key = (Reverse(tx.fee), self.next_seq);
        self.pending_index.insert(d, key);
        self.pending.insert(key, tx);
        self.next_seq += 1;
    }

    fn drop_pending(&mut self, d: &Digest) {
        if let Some(key) = self.pending_index.remove(d) {
            self.pending.remove(&key);
        }
    }

    /// Next block on the current tip: up to the cap of the highest-fee
    /// pending transactions (oldest first among equal fees), skipping any
    /// whose sender can no longer pay the fee.
    pub fn build_block(&mut self, now: Millis, nonce: u64) -> (Block, Arc<Vec<InterTxRef>>) {
        let mut state = self.tip_state().clone();
        let mut picked = Vec::new();
        let mut stale = Vec::new();
        for tx in self.pending.values() {
            if picked.len() == self.cfg.block_capacity {
                break;
            }
            match state.apply_tx(tx, self.miner_id) {
                Ok(_) => picked.push(tx.clone()),
                Err(_) => stale.push(tx.digest()),
            }
        }
        for d in &stale {
            self.drop_pending(d);
        }
        let block = Block {
            parent: self.tip_digest(),
            height: self.tip_height() + 1,
            tx_root: tx_root(picked.iter().map(LedgerTx::digest)),
            timestamp: now,
            seal: Seal::Pow {
                miner: self.miner_id,
                nonce,
                target: self.cfg.target,
            },
        };
        (block, Arc::new(picked))
    }

    /// Virtual-time mining: the caller decided (by sampling) that this
    /// miner wins now, so the block needs no nonce search.
    pub fn mine_virtual(&mut self, now: Millis) -> (Block, Arc<Vec<InterTxRef>>) {
        let (block, txs) = self.build_block(now, 0);
        let adopted = self.on_block(block.clone(), txs.clone());
        debug_assert!(matches!(adopted, Ok(Adoption::Adopted { .. })));
        (block, txs)
    }

    /// Puzzle mining: tries `batch` nonces against the target. The block
    /// template is rebuilt whenever the tip moves.
    pub fn mine_puzzle(&mut self, now: Millis, batch: u64) -> Option<(Block, Arc<Vec<InterTxRef>>)> {
        let stale = self
            .template
            .as_ref()
            .is_none_or(|(b, _)| b.parent != self.tip_digest());
        if stale {
            self.template = Some(self.build_block(now, 0));
        }
        let (template, txs) = self.template.as_mut().expect("template set above");
        for _ in 0..batch {
            if template.pow_valid() {
                let found = (template.clone(), txs.clone());
                self.template = None;
                let adopted = self.on_block(found.0.clone(), found.1.clone());
                debug_assert!(matches!(adopted, Ok(Adoption::Adopted { .. })));
                return Some(found);
            }
            if let Seal::Pow { nonce, .. } = &mut template.seal {
                *nonce = nonce.wrapping_add(1);
            }
        }
        None
    }

    fn check_block(&self, block: &Block, txs: &[InterTxRef]) -> Result<(), BlockError> {
        match &block.seal {
            Seal::Pow { target, .. } if *target == self.cfg.target && block.pow_valid() => {}
            _ => return Err(BlockError::InvalidSeal),
        }
        if txs.len() > self.cfg.block_capacity {
            return Err(BlockError::OverCapacity);
        }
        if block.tx_root != tx_root(txs.iter().map(LedgerTx::digest)) {
            return Err(BlockError::BadTxRoot);
        }
        if !txs.iter().all(|tx| tx.verify(self.verifier.as_ref())) {
            return Err(BlockError::BadSignature);
        }
        Ok(())
    }

    pub fn on_block(
        &mut self,
        block: Block,
        txs: Arc<Vec<InterTxRef>>,
    ) -> Result<Adoption, BlockError> {
        let result = self.insert_block(block, txs);
        if matches!(result, Ok(Adoption::Stored | Adoption::Adopted { .. })) {
            self.drain_orphans();
        }
        result
    }

    fn insert_block(
        &mut self,
        block: Block,
        txs: Arc<Vec<InterTxRef>>,
    ) -> Result<Adoption, BlockError> {
        let d = block.digest();
        if self.tree.contains_key(&d) || self.orphans.iter().any(|(b, _)| b.digest() == d) {
            return Ok(Adoption::Duplicate);
        }
        self.check_block(&block, &txs)?;
        let Some(parent) = self.tree.get(&block.parent) else {
            if self.orphans.len() >= self.cfg.orphan_limit {
                self.orphans.pop_front();
            }
            self.orphans.push_back((block, txs));
            return Ok(Adoption::Orphaned);
        };
        if block.height != parent.block.height + 1 {
            return Err(BlockError::BadHeight);
        }
        let height = block.height;
        self.tree.insert(d, Node { block, txs });
        if height <= self.tip_height() {
            return Ok(Adoption::Stored);
        }
        match self.switch_to(d) {
            Ok(depth) => Ok(Adoption::Adopted { reorg_depth: depth }),
            Err(e) => {
                self.tree.remove(&d);
                Err(e)
            }
        }
    }

    fn drain_orphans(&mut self) {
        loop {
            let Some(i) = self
                .orphans
                .iter()
                .position(|(b, _)| self.tree.contains_key(&b.parent))
            else {
                return;
            };
            let (b, txs) = self.orphans.remove(i).expect("index from position");
            let _ = self.insert_block(b, txs);
        }
    }

    /// Makes the branch ending at `head` canonical. Returns the number of
    /// displaced blocks.
    fn switch_to(&mut self, head: Digest) -> Result<u64, BlockError> {
        let mut branch = Vec::new();
        let mut cur = head;
        loop {
            let node = &self.tree[&cur];
            if self.chain.block_digest(node.block.height) == Some(cur) {
                break;
            }
            branch.push(cur);
            cur = node.block.parent;
        }
        branch.reverse();
        let fork = self.tree[&cur].block.height;

        let mut seen = HashSet::new();
        let mut state = self.states[fork as usize].clone();
        let mut new_states = Vec::with_capacity(branch.len());
        let mut new_receipts = Vec::with_capacity(branch.len());
        for d in &branch {
            let node = &self.tree[d];
            for tx in node.txs.iter() {
                let td = tx.digest();
                let on_prefix = self.chain.locate(&td).is_some_and(|l| l.height <= fork);
                if on_prefix || !seen.insert(td) {
                    return Err(BlockError::DuplicateTx);
                }
            }
            let Seal::Pow { miner, .. } = node.block.seal else {
                return Err(BlockError::InvalidSeal);
            };
            new_receipts.push(state.apply_block(&node.txs, miner, self.cfg.block_reward)?);
            new_states.push(state.clone());
        }

        let displaced = self.chain.truncate(fork);
        self.states.truncate(fork as usize + 1);
        self.receipts.truncate(fork as usize + 1);
        for ((d, s), r) in branch.iter().zip(new_states).zip(new_receipts) {
            let node = &self.tree[d];
            self.chain
                .append(node.block.clone(), node.txs.as_ref().clone())
                .expect("branch validated above");
            self.states.push(s);
            self.receipts.push(r);
        }
        let depth = displaced.len() as u64;
        if depth > 0 {
            self.reorgs += 1;
        }
        for (_, body) in displaced {
            for tx in body {
                if !seen.contains(&tx.digest()) {
                    self.push_pending(tx);
                }
            }
        }
        for d in &seen {
            self.drop_pending(d);
        }

        if fork < self.confirmed_height {
            self.reverted_confirmed += self.confirmed_height - fork;
            self.unreported.retain(|h| *h <= fork);
            self.confirmed_height = fork;
        }
        let k = self.cfg.confirmation_depth.max(1);
        let reach = (self.tip_height() + 1).saturating_sub(k);
        while self.confirmed_height < reach {
            self.confirmed_height += 1;
            self.unreported.push(self.confirmed_height);
        }
        Ok(depth)
    }
}

/// Delay until a miner with hash-power `share` finds its next block when
/// the network as a whole averages one block per `mean_interval_ms`.
pub fn sample_block_delay(rng: &mut impl Rng, mean_interval_ms: f64, share: f64) -> Millis {
    let exp = Exp::new(share / mean_interval_ms).expect("positive rate");
    (exp.sample(rng).ceil() as Millis).max(1)
}
