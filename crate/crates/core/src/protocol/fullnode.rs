use std::any::Any;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::delegate::{Action, DelegateRole};
use super::directory::Directory;
use super::event::{CallRecord, Event, TransferRecord};
use super::message::{Msg, ProtoMsg};
use super::replica::IntraReplica;
use super::NodeCtx;
use crate::amount::Amount;
use crate::contract::{ContractCall, Effect};
use crate::crypto::{Address, Digest, Keypair};
use crate::inter::{sample_block_delay, Adoption, InterTx, InterTxRef, MinerState};
use crate::ledger::{Block, Seal};
use crate::sim::{Millis, NodeId, Process};

const TAG_MINE: u64 = 1;
const TAG_KEEPALIVE: u64 = 2;
const ADMIN_RETRY_MS: Millis = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MiningMode {
    None,
    /// Block discovery sampled from an exponential with the network mean
    /// scaled by this node's hash share.
    Virtual { mean_interval_ms: f64, share: f64 },
    /// Real hash search: `batch` nonces every `tick_ms`.
    Puzzle { batch: u64, tick_ms: Millis },
}

/// A peer of the inter-ledger network. Optionally mines, acts as a
/// domain delegate, administers the exchange contracts or audits
/// confirmations.
pub struct FullNode {
    key: Keypair,
    address: Address,
    miner: MinerState,
    dir: Arc<Directory>,
    mining: MiningMode,
    delegate: Option<DelegateRole>,
    admin: bool,
    admin_sent: HashMap<(u64, Address), Millis>,
    admin_nonce: u64,
    auditor: bool,
    reported: BTreeMap<u64, Digest>,
    confirm_times: HashMap<Digest, Millis>,
    mined: u64,
}

impl FullNode {
    pub fn new(key: Keypair, miner: MinerState, dir: Arc<Directory>, mining: MiningMode) -> Self {
        Self {
            address: key.address(),
            key,
            miner,
            dir,
            mining,
            delegate: None,
            admin: false,
            admin_sent: HashMap::new(),
            admin_nonce: 0,
            auditor: false,
            reported: BTreeMap::new(),
            confirm_times: HashMap::new(),
            mined: 0,
        }
    }

    /// Serves clients of `zone`, following its ledger through `replica`.
    pub fn with_delegate(mut self, zone: crate::ledger::ZoneId, replica: IntraReplica) -> Self {
        let info = self.dir.zone(zone).clone();
        self.delegate = Some(DelegateRole::new(self.key.clone(), self.dir.clone(), info, replica));
        self
    }

    pub fn with_admin(mut self) -> Self {
        self.admin = true;
        self
    }

    pub fn with_auditor(mut self) -> Self {
        self.auditor = true;
        self
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn miner(&self) -> &MinerState {
        &self.miner
    }

    pub fn blocks_mined(&self) -> u64 {
        self.mined
    }

    /// First time this auditor saw each transaction confirmed.
    pub fn confirm_times(&self) -> &HashMap<Digest, Millis> {
        &self.confirm_times
    }

    pub fn delegate_replica(&self) -> Option<&IntraReplica> {
        self.delegate.as_ref().map(|d| d.replica())
    }

    pub fn active_sessions(&self) -> usize {
        self.delegate.as_ref().map_or(0, |d| d.session_count())
    }

    fn peers(&self, me: NodeId) -> Vec<NodeId> {
        self.dir.full_nodes.iter().copied().filter(|p| *p != me).collect()
    }

    fn broadcast_tx(&mut self, ctx: &mut NodeCtx<'_>, tx: InterTx) {
        let tx = Arc::new(tx);
        let _ = self.miner.admit(tx.clone());
        for p in self.peers(ctx.me()) {
            ctx.send(p, Msg::InterTx(tx.clone()));
        }
    }

    fn broadcast_block(&self, ctx: &mut NodeCtx<'_>, block: &Block, txs: &Arc<Vec<InterTxRef>>, skip: Option<NodeId>) {
        for p in self.peers(ctx.me()) {
            if Some(p) != skip {
                ctx.send(
                    p,
                    Msg::InterBlock {
                        block: block.clone(),
                        txs: txs.clone(),
                    },
                );
            }
        }
    }

    fn schedule_mining(&self, ctx: &mut NodeCtx<'_>) {
        match self.mining {
            MiningMode::None => {}
            MiningMode::Virtual {
                mean_interval_ms,
                share,
            } => {
                let after = sample_block_delay(ctx.rng(), mean_interval_ms, share);
                ctx.timer(after, TAG_MINE);
            }
            MiningMode::Puzzle { tick_ms, .. } => ctx.timer(tick_ms, TAG_MINE),
        }
    }

    fn mine(&mut self, ctx: &mut NodeCtx<'_>) {
        let found = match self.mining {
            MiningMode::None => None,
            MiningMode::Virtual { .. } => Some(self.miner.mine_virtual(ctx.now())),
            MiningMode::Puzzle { batch, .. } => self.miner.mine_puzzle(ctx.now(), batch),
        };
        if let Some((block, txs)) = found {
            self.mined += 1;
            ctx.emit(Event::InterMined {
                height: block.height,
                block: block.digest(),
                txs: txs.len() as u32,
            });
            self.broadcast_block(ctx, &block, &txs, None);
            self.after_chain_change(ctx);
        }
        self.schedule_mining(ctx);
    }

    fn after_chain_change(&mut self, ctx: &mut NodeCtx<'_>) {
        let heights = self.miner.take_confirmations();
        if self.auditor {
            self.audit(ctx, heights);
        }
        if let Some(d) = self.delegate.as_mut() {
            d.drive_all(&self.miner, ctx.now());
        }
        self.flush(ctx);
    }

    fn audit(&mut self, ctx: &mut NodeCtx<'_>, heights: Vec<u64>) {
        let confirmed = self.miner.confirmed_height();
        let chain = self.miner.chain();
        let stale: Vec<_> = self
            .reported
            .iter()
            .filter(|(h, d)| **h > confirmed || chain.block_digest(**h) != Some(**d))
            .map(|(h, d)| (*h, *d))
            .collect();
        for (height, block) in stale {
            self.reported.remove(&height);
            ctx.emit(Event::InterReverted { height, block });
        }
        for h in heights {
            let Some(block) = self.miner.chain().block(h).cloned() else {
                continue;
            };
            let digest = block.digest();
            if self.reported.get(&h) == Some(&digest) {
                continue;
            }
            self.reported.insert(h, digest);
            let Seal::Pow { miner, .. } = block.seal else {
                continue;
            };
            let txs = self.miner.chain().body(h).unwrap_or_default();
            let mut fee_payers: BTreeMap<Address, Amount> = BTreeMap::new();
            for t in txs {
                *fee_payers.entry(t.sender).or_default() += t.fee;
            }
            let mut calls = Vec::new();
            let mut flows: BTreeMap<(Address, Address), Amount> = BTreeMap::new();
            for (tx, r) in txs.iter().zip(self.miner.receipts_at(h)) {
                self.confirm_times.entry(r.tx).or_insert(ctx.now());
                match (&tx.call, &r.result) {
                    (ContractCall::Transfer { to }, Ok(_)) => {
                        *flows.entry((tx.sender, *to)).or_default() += tx.attached_value;
                    }
                    (ContractCall::Transfer { .. }, Err(_)) => {}
                    (_, result) => calls.push(CallRecord {
                        tx: r.tx,
                        sender: r.sender,
                        contract_id: r.contract_id,
                        method: r.method.to_string(),
                        ok: result.is_ok(),
                        effect: result.as_ref().ok().copied().filter(|e| *e != Effect::None),
                    }),
                }
            }
            let transfers = flows
                .into_iter()
                .map(|((from, to), amount)| TransferRecord { from, to, amount })
                .collect();
            ctx.emit(Event::InterConfirmed {
                height: h,
                block: digest,
                miner,
                fee_payers: fee_payers.into_iter().collect(),
                reward: self.miner.config().block_reward,
                calls,
                transfers,
            });
        }
    }

    fn flush(&mut self, ctx: &mut NodeCtx<'_>) {
        let Some(d) = self.delegate.as_mut() else {
            return;
        };
        let actions = std::mem::take(&mut d.out);
        let zone = d.replica().zone();
        for a in actions {
            match a {
                Action::Send(to, msg) => {
                    ctx.emit(Event::Message {
                        session: msg.session(),
                        from: ctx.me(),
                        to,
                        msg: msg.kind().to_string(),
                    });
                    ctx.send(to, Msg::Proto(msg));
                }
                Action::Inter(tx) => self.broadcast_tx(ctx, tx),
                Action::Intra(tx) => {
                    let batch = Arc::new(vec![tx]);
                    for v in self.dir.zone(zone).validators.clone() {
                        ctx.send(v, Msg::IntraSubmit(batch.clone()));
                    }
                }
                Action::Emit(e) => ctx.emit(e),
            }
        }
    }

    fn on_replace_request(&mut self, ctx: &mut NodeCtx<'_>, contract_id: u64, old: Address, new: Address) {
        let Some(c) = self.miner.tip_state().contract(contract_id) else {
            return;
        };
        let list = &c.delegation_list;
        let (Some(i), Some(j)) = (
            list.iter().position(|a| *a == old),
            list.iter().position(|a| *a == new),
        ) else {
            return;
        };
        if j <= i || c.side_of(&old).is_none() {
            return;
        }
        // One hop at a time; the requester asks again once it lands.
        let next = list[i + 1];
        let key = (contract_id, old);
        let now = ctx.now();
        if self
            .admin_sent
            .get(&key)
            .is_some_and(|at| now < at + ADMIN_RETRY_MS)
        {
            return;
        }
        self.admin_sent.insert(key, now);
        let tx = InterTx::new(
            &self.key,
            contract_id,
            ContractCall::ReplaceDelegate { old, new: next },
            Amount::ZERO,
            None,
            self.admin_nonce,
        );
        self.admin_nonce += 1;
        self.broadcast_tx(ctx, tx);
    }
}

impl Process<Msg, Event> for FullNode {
    fn on_start(&mut self, ctx: &mut NodeCtx<'_>) {
        self.schedule_mining(ctx);
        if self.delegate.is_some() {
            ctx.timer(self.dir.keepalive_ms, TAG_KEEPALIVE);
        }
    }

    fn on_message(&mut self, ctx: &mut NodeCtx<'_>, from: NodeId, msg: Msg) {
        match msg {
            Msg::InterTx(tx) => {
                let _ = self.miner.admit(tx);
            }
            Msg::InterBlock { block, txs } => {
                let parent = block.parent;
                match self.miner.on_block(block.clone(), txs.clone()) {
                    Ok(Adoption::Adopted { .. }) => {
                        self.broadcast_block(ctx, &block, &txs, Some(from));
                        self.after_chain_change(ctx);
                    }
                    Ok(Adoption::Stored) => {
                        self.broadcast_block(ctx, &block, &txs, Some(from));
                    }
                    Ok(Adoption::Orphaned) => ctx.send(from, Msg::GetBlock(parent)),
                    Ok(Adoption::Duplicate) | Err(_) => {}
                }
            }
            Msg::GetBlock(d) => {
                if let Some((block, txs)) = self.miner.block(&d) {
                    ctx.send(from, Msg::InterBlock { block, txs });
                }
            }
            Msg::IntraCommitted(c) | Msg::SyncBlock(c) => {
                if let Some(d) = self.delegate.as_mut() {
                    let applied = !d.replica_mut().ingest(c, ctx.now()).is_empty();
                    let missing = d.replica().missing();
                    d.set_synced(missing.is_none());
                    if let Some(h) = missing {
                        ctx.send(from, Msg::SyncRequest { height: h });
                    }
                    if applied {
                        d.on_replica_update(&self.miner, ctx.now());
                        self.flush(ctx);
                    }
                }
            }
            Msg::Proto(p) => {
                ctx.emit(Event::Message {
                    session: p.session(),
                    from,
                    to: ctx.me(),
                    msg: p.kind().to_string(),
                });
                match p {
                    ProtoMsg::ReplaceRequest {
                        contract_id,
                        old,
                        new,
                    } if self.admin => self.on_replace_request(ctx, contract_id, old, new),
                    p => {
                        if let Some(d) = self.delegate.as_mut() {
                            d.on_request(from, p, &self.miner, ctx.now());
                            self.flush(ctx);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeCtx<'_>, tag: u64) {
        match tag {
            TAG_MINE => self.mine(ctx),
            TAG_KEEPALIVE => {
                if let Some(d) = self.delegate.as_mut() {
                    d.keepalive();
                    d.drive_all(&self.miner, ctx.now());
                }
                self.flush(ctx);
                ctx.timer(self.dir.keepalive_ms, TAG_KEEPALIVE);
            }
            _ => {}
        }
    }

    fn on_recover(&mut self, ctx: &mut NodeCtx<'_>) {
        // Domain blocks announced while down are fetched on the next announcement.
        if let Some(d) = self.delegate.as_mut() {
            d.set_synced(false);
        }
        self.on_start(ctx);
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
