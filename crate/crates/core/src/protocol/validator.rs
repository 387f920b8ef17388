use std::any::Any;
use std::sync::Arc;

use super::directory::Directory;
use super::event::{Event, TransferRecord};
use super::message::Msg;
use super::NodeCtx;
use crate::intra::{
    CommittedBlock, DomainState, IntraReceipt, Output, Timeout, ValidatorState,
};
use crate::ledger::{LedgerTx, Seal, ZoneId};
use crate::sim::{Millis, NodeId, Process};

/// A committee member of one domain.
pub struct ValidatorNode {
    zone: ZoneId,
    state: ValidatorState,
    domain: DomainState,
    dir: Arc<Directory>,
    /// Local commit time per height (index 0 is genesis).
    commit_times: Vec<Millis>,
    evidence_seen: usize,
    last_sync: Option<(u64, Millis)>,
}

impl ValidatorNode {
    pub fn new(zone: ZoneId, state: ValidatorState, domain: DomainState, dir: Arc<Directory>) -> Self {
        Self {
            zone,
            state,
            domain,
            dir,
            commit_times: vec![0],
            evidence_seen: 0,
            last_sync: None,
        }
    }

    pub fn consensus(&self) -> &ValidatorState {
        &self.state
    }

    pub fn domain(&self) -> &DomainState {
        &self.domain
    }

    pub fn commit_time(&self, height: u64) -> Option<Millis> {
        self.commit_times.get(height as usize).copied()
    }

    fn peers(&self, me: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.dir
            .zone(self.zone)
            .validators
            .iter()
            .copied()
            .filter(move |v| *v != me)
    }

    fn apply(&mut self, ctx: &mut NodeCtx<'_>, outs: Vec<Output>) {
        for o in outs {
            match o {
                Output::Broadcast(m) => {
                    let peers: Vec<_> = self.peers(ctx.me()).collect();
                    for p in peers {
                        ctx.send(p, Msg::Consensus(m.clone()));
                    }
                }
                Output::Schedule { timeout, after } => ctx.timer(after, timeout.tag()),
                Output::Commit(c) => self.on_commit(ctx, c),
            }
        }
        let ev = self.state.evidence();
        for e in &ev[self.evidence_seen..] {
            ctx.emit(Event::Equivocation {
                zone: self.zone,
                validator: e.first.sender,
                height: e.first.height,
                round: e.first.round,
            });
        }
        self.evidence_seen = ev.len();
    }

    fn on_commit(&mut self, ctx: &mut NodeCtx<'_>, c: Arc<CommittedBlock>) {
        self.commit_times.push(ctx.now());
        let mut transfers = Vec::new();
        for tx in &c.txs {
            if let IntraReceipt::Transferred(t) = self.domain.apply(tx) {
                transfers.push(TransferRecord {
                    from: tx.sender,
                    to: t.to,
                    amount: t.amount,
                });
            }
        }
        let round = match &c.block.seal {
            Seal::Bft { round, .. } => *round,
            Seal::Pow { .. } => 0,
        };
        ctx.emit(Event::IntraCommitted {
            zone: self.zone,
            height: c.block.height,
            block: c.block.digest(),
            round,
            txs: c.txs.len() as u32,
            transfers,
        });
        let observers = self.dir.zone(self.zone).observers.clone();
        for o in observers {
            ctx.send(o, Msg::IntraCommitted(c.clone()));
        }
    }

    fn committed(&self, height: u64) -> Option<Arc<CommittedBlock>> {
        let ledger = self.state.ledger();
        let block = ledger.block(height)?.clone();
        let txs = ledger.body(height)?.to_vec();
        Some(Arc::new(CommittedBlock {
            zone_id: self.zone,
            block,
            txs,
        }))
    }
}

impl Process<Msg, Event> for ValidatorNode {
    fn on_start(&mut self, ctx: &mut NodeCtx<'_>) {
        let outs = self.state.start(ctx.now());
        self.apply(ctx, outs);
    }

    fn on_message(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, msg: Msg) {
        match msg {
            Msg::Consensus(m) => {
                if m.height > self.state.height {
                    let h = self.state.height;
                    let due = self.last_sync.is_none_or(|(lh, at)| {
                        lh != h || ctx.now() >= at + self.state.config().round_timeout_ms
                    });
                    if due {
                        self.last_sync = Some((h, ctx.now()));
                        ctx.send(from, Msg::SyncRequest { height: h });
                    }
                }
                let outs = self.state.handle_msg(m, ctx.now());
                self.apply(ctx, outs);
            }
            Msg::IntraSubmit(txs) => {
                for tx in txs.iter() {
                    self.state.submit(tx.clone());
                }
            }
            Msg::SyncRequest { height } => {
                if let Some(c) = self.committed(height) {
                    ctx.send(from, Msg::SyncBlock(c));
                }
            }
            Msg::SyncBlock(c) => {
                if c.zone_id == self.zone && c.block.height == self.state.height {
                    if let Ok(outs) = self
                        .state
                        .apply_synced(c.block.clone(), c.txs.clone(), ctx.now())
                    {
                        self.apply(ctx, outs);
                        ctx.send(from, Msg::SyncRequest { height: self.state.height });
                    }
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, tag: u64) {
        if let Some(t) = Timeout::from_tag(tag) {
            let outs = self.state.on_timeout(t, ctx.now());
            self.apply(ctx, outs);
        }
    }

    fn on_recover(&mut self, ctx: &mut NodeCtx<'_>) {
        let outs = self.state.rearm();
        self.apply(ctx, outs);
    }

    fn equivocate(&mut self, msg: &Msg) -> Option<Msg> {
        match msg {
            Msg::Consensus(m) => self.state.equivocate(m).map(Msg::Consensus),
            _ => None,
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

impl ValidatorNode {
    /// Committed transaction digests with the height they landed at.
    pub fn committed_txs(&self) -> impl Iterator<Item = (u64, crate::crypto::Digest)> + '_ {
        self.state
            .ledger()
            .blocks()
            .flat_map(|(b, txs)| txs.iter().map(move |t| (b.height, t.digest())))
    }
}
