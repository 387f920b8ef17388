use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::amount::Amount;
use crate::crypto::{Address, Digest, Keyring};
use crate::intra::{CommittedBlock, DomainState, IntraReceipt};
use crate::ledger::{Block, IntraTx, Ledger, LedgerTx, ZoneId};
use crate::sim::Millis;

/// A committed domain transfer indexed by its memo.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoTransfer {
    pub tx: Digest,
    pub from: Address,
    pub to: Address,
    pub amount: Amount,
    pub height: u64,
}

/// Follower copy of one domain ledger, fed by validators' commit
/// announcements. Blocks are accepted in height order once their quorum
/// certificate checks out.
pub struct IntraReplica {
    zone: ZoneId,
    committee: Vec<Address>,
    f: usize,
    verifier: Arc<Keyring>,
    ledger: Ledger<IntraTx>,
    state: DomainState,
    early: BTreeMap<u64, Arc<CommittedBlock>>,
    memos: HashMap<Digest, Vec<MemoTransfer>>,
    commit_times: Vec<Millis>,
}

impl IntraReplica {
    pub fn new(
        zone: ZoneId,
        committee: Vec<Address>,
        f: usize,
        verifier: Arc<Keyring>,
        genesis: DomainState,
    ) -> Self {
        Self {
            zone,
            committee,
            f,
            verifier,
            ledger: Ledger::new(Block::genesis_bft()),
            state: genesis,
            early: BTreeMap::new(),
            memos: HashMap::new(),
            commit_times: vec![0],
        }
    }

    pub fn zone(&self) -> ZoneId {
        self.zone
    }

    pub fn ledger(&self) -> &Ledger<IntraTx> {
        &self.ledger
    }

    pub fn state(&self) -> &DomainState {
        &self.state
    }

    pub fn height(&self) -> u64 {
        self.ledger.tip_height()
    }

    /// The next height to fetch when later blocks are waiting on a gap.
    pub fn missing(&self) -> Option<u64> {
        (!self.early.is_empty()).then(|| self.height() + 1)
    }

    /// When this replica learned of the block at `height`.
    pub fn seen_at(&self, height: u64) -> Option<Millis> {
        self.commit_times.get(height as usize).copied()
    }

    pub fn transfers_with_memo(&self, memo: &Digest) -> &[MemoTransfer] {
        self.memos.get(memo).map_or(&[], Vec::as_slice)
    }

    /// Takes an announcement; returns blocks newly applied, in order.
    pub fn ingest(&mut self, c: Arc<CommittedBlock>, now: Millis) -> Vec<Arc<CommittedBlock>> {
        if c.zone_id != self.zone || c.block.height <= self.height() {
            return Vec::new();
        }
        self.early.entry(c.block.height).or_insert(c);
        let mut applied = Vec::new();
        while let Some(next) = self.early.remove(&(self.height() + 1)) {
            if !next
                .block
                .quorum_valid(&self.committee, self.f, self.verifier.as_ref())
                || self.ledger.append(next.block.clone(), next.txs.clone()).is_err()
            {
                continue;
            }
            self.commit_times.push(now);
            let h = next.block.height;
            for tx in &next.txs {
                if let IntraReceipt::Transferred(t) = self.state.apply(tx) {
                    self.memos.entry(t.memo).or_default().push(MemoTransfer {
                        tx: tx.digest(),
                        from: tx.sender,
                        to: t.to,
                        amount: t.amount,
                        height: h,
                    });
                }
            }
            applied.push(next);
        }
        self.early.retain(|h, _| *h > self.ledger.tip_height());
        applied
    }
}
