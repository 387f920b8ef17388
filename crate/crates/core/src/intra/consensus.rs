//! Tendermint-style three-phase BFT consensus for one domain.
//!
//! Each height runs one or more rounds. The round's proposer,
//! `committee[(height + round) mod n]`, broadcasts a block; validators
//! PREVOTE for it (or nil), lock on a block once they see `2f+1` matching
//! prevotes and PRECOMMIT it, and commit once `2f+1` matching precommits
//! exist. A validator locked on a block only prevotes a different one if
//! it was re-proposed with a prevote quorum from a round at or after the
//! lock. Timeouts move a stuck round along with nil votes.
//!
//! Step deadlines for round `r` are `round_timeout * (r + 1)`; the propose
//! deadline adds one extra `round_timeout` because honest validators may
//! enter a height up to one message delay apart. A hard round deadline of
//! `5 * round_timeout * (r + 1)` covers lost messages (partitions).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::mempool::Mempool;
use crate::codec::Encoder;
use crate::crypto::{hash_parts, Address, Digest, Keypair, Keyring, Signature, Verifier};
use crate::ledger::{
    precommit_bytes, tx_root, Block, IntraTx, Ledger, LedgerTx, QuorumVote, Seal, ZoneId,
};
use crate::sim::Millis;

pub const DEFAULT_BLOCK_CAPACITY: usize = 1000;
pub const DEFAULT_ROUND_TIMEOUT_MS: Millis = 200;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("committee of {n} cannot tolerate {f} faults (needs n >= 3f+1)")]
    CommitteeTooSmall { n: usize, f: usize },
    #[error("validator is not a committee member")]
    NotInCommittee,
    #[error("synced block does not extend the ledger or lacks a quorum")]
    BadSyncBlock,
}

#[derive(Clone, Debug)]
pub struct ConsensusConfig {
    pub zone_id: ZoneId,
    pub committee: Vec<Address>,
    pub f: usize,
    pub block_capacity: usize,
    pub round_timeout_ms: Millis,
    /// Pause after a commit before the next height starts.
    pub commit_delay_ms: Millis,
}

impl ConsensusConfig {
    pub fn new(zone_id: ZoneId, committee: Vec<Address>, f: usize) -> Result<Self, ConsensusError> {
        if committee.len() < 3 * f + 1 {
            return Err(ConsensusError::CommitteeTooSmall {
                n: committee.len(),
                f,
            });
        }
        Ok(Self {
            zone_id,
            committee,
            f,
            block_capacity: DEFAULT_BLOCK_CAPACITY,
            round_timeout_ms: DEFAULT_ROUND_TIMEOUT_MS,
            commit_delay_ms: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.committee.len()
    }

    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    pub fn proposer(&self, height: u64, round: u32) -> Address {
        self.committee[((height + round as u64) % self.n() as u64) as usize]
    }

    fn step_timeout(&self, round: u32) -> Millis {
        self.round_timeout_ms * (round as Millis + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Step {
    /// Waiting out the commit delay before round 0 of the next height.
    NewHeight,
    Propose,
    Prevote,
    Precommit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MsgKind {
    Proposal,
    Prevote,
    Precommit,
}

impl MsgKind {
    fn name(self) -> &'static str {
        match self {
            MsgKind::Proposal => "PROPOSAL",
            MsgKind::Prevote => "PREVOTE",
            MsgKind::Precommit => "PRECOMMIT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub block: Block,
    pub txs: Vec<IntraTx>,
    /// Round of an earlier prevote quorum for this block, if re-proposed.
    pub valid_round: Option<u32>,
    /// The `2f+1` prevotes from `valid_round`, so validators that missed
    /// some of them can still accept the re-proposal.
    pub pol: Vec<ConsensusMsg>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsensusMsg {
    pub kind: MsgKind,
    pub height: u64,
    pub round: u32,
    /// `None` is a nil vote.
    pub block_digest: Option<Digest>,
    pub sender: Address,
    pub signature: Signature,
    pub proposal: Option<Arc<Proposal>>,
}

impl ConsensusMsg {
    fn signing_bytes(
        kind: MsgKind,
        height: u64,
        round: u32,
        digest: Option<&Digest>,
        valid_round: Option<u32>,
    ) -> Vec<u8> {
        if kind == MsgKind::Precommit {
            if let Some(d) = digest {
                return precommit_bytes(height, round, d);
            }
        }
        let mut enc = Encoder::new();
        enc.str(kind.name()).u64(height).u32(round).option(digest);
        if kind == MsgKind::Proposal {
            enc.option(valid_round.as_ref());
        }
        enc.finish()
    }

    pub fn vote(
        key: &Keypair,
        kind: MsgKind,
        height: u64,
        round: u32,
        block_digest: Option<Digest>,
    ) -> Self {
        let signature = key.sign(&Self::signing_bytes(
            kind,
            height,
            round,
            block_digest.as_ref(),
            None,
        ));
        Self {
            kind,
            height,
            round,
            block_digest,
            sender: key.address(),
            signature,
            proposal: None,
        }
    }

    pub fn propose(key: &Keypair, height: u64, round: u32, proposal: Arc<Proposal>) -> Self {
        let digest = proposal.block.digest();
        let signature = key.sign(&Self::signing_bytes(
            MsgKind::Proposal,
            height,
            round,
            Some(&digest),
            proposal.valid_round,
        ));
        Self {
            kind: MsgKind::Proposal,
            height,
            round,
            block_digest: Some(digest),
            sender: key.address(),
            signature,
            proposal: Some(proposal),
        }
    }

    /// Signature check plus internal consistency of the proposal payload.
    pub fn verify(&self, verifier: &impl Verifier) -> bool {
        let valid_round = self.proposal.as_ref().and_then(|p| p.valid_round);
        match (self.kind, &self.proposal, &self.block_digest) {
            (MsgKind::Proposal, Some(p), Some(d)) => {
                if p.block.digest() != *d || p.block.height != self.height {
                    return false;
                }
            }
            (MsgKind::Proposal, _, _) => return false,
            (_, Some(_), _) => return false,
            _ => {}
        }
        verifier.verify(
            &self.sender,
            &Self::signing_bytes(
                self.kind,
                self.height,
                self.round,
                self.block_digest.as_ref(),
                valid_round,
            ),
            &self.signature,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TimeoutKind {
    StartHeight,
    Propose,
    Prevote,
    Precommit,
    Round,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Timeout {
    pub kind: TimeoutKind,
    pub height: u64,
    pub round: u32,
}

const ROUND_BITS: u32 = 20;
const HEIGHT_BITS: u32 = 40;

impl Timeout {
    /// Packs into a simulator timer tag: kind (4 bits) | height (40) | round (20).
    pub fn tag(&self) -> u64 {
        let kind = match self.kind {
            TimeoutKind::StartHeight => 1u64,
            TimeoutKind::Propose => 2,
            TimeoutKind::Prevote => 3,
            TimeoutKind::Precommit => 4,
            TimeoutKind::Round => 5,
        };
        (kind << (ROUND_BITS + HEIGHT_BITS))
            | ((self.height & ((1 << HEIGHT_BITS) - 1)) << ROUND_BITS)
            | (self.round as u64 & ((1 << ROUND_BITS) - 1))
    }

    pub fn from_tag(tag: u64) -> Option<Self> {
        let kind = match tag >> (ROUND_BITS + HEIGHT_BITS) {
            1 => TimeoutKind::StartHeight,
            2 => TimeoutKind::Propose,
            3 => TimeoutKind::Prevote,
            4 => TimeoutKind::Precommit,
            5 => TimeoutKind::Round,
            _ => return None,
        };
        Some(Self {
            kind,
            height: (tag >> ROUND_BITS) & ((1 << HEIGHT_BITS) - 1),
            round: (tag & ((1 << ROUND_BITS) - 1)) as u32,
        })
    }
}

/// A finalized block with its body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommittedBlock {
    pub zone_id: ZoneId,
    pub block: Block,
    pub txs: Vec<IntraTx>,
}

#[derive(Clone, Debug)]
pub enum Output {
    Broadcast(ConsensusMsg),
    Schedule { timeout: Timeout, after: Millis },
    Commit(Arc<CommittedBlock>),
}

/// Two signed messages from one sender for the same slot with different digests.
#[derive(Clone, Debug)]
pub struct Evidence {
    pub first: ConsensusMsg,
    pub second: ConsensusMsg,
}

pub struct ValidatorState {
    pub validator_id: Address,
    key: Keypair,
    cfg: ConsensusConfig,
    verifier: Arc<Keyring>,
    pub height: u64,
    pub round: u32,
    pub step: Step,
    locked: Option<(u32, Arc<Proposal>)>,
    valid: Option<(u32, Arc<Proposal>, Vec<ConsensusMsg>)>,
    mempool: Mempool,
    vote_log: HashMap<(u64, u32, MsgKind), BTreeMap<Address, ConsensusMsg>>,
    proposals: HashMap<(u64, u32), Arc<Proposal>>,
    by_digest: HashMap<Digest, Arc<Proposal>>,
    validity: HashMap<Digest, bool>,
    prevote_timer: HashSet<u32>,
    precommit_timer: HashSet<u32>,
    polka_seen: HashSet<u32>,
    pol_checked: HashMap<(u32, Digest), bool>,
    evidence: Vec<Evidence>,
    ledger: Ledger<IntraTx>,
    alt_blocks: HashMap<Digest, Arc<Proposal>>,
}

impl ValidatorState {
    pub fn new(
        key: Keypair,
        cfg: ConsensusConfig,
        verifier: Arc<Keyring>,
    ) -> Result<Self, ConsensusError> {
        if cfg.committee.len() < 3 * cfg.f + 1 {
            return Err(ConsensusError::CommitteeTooSmall {
                n: cfg.committee.len(),
                f: cfg.f,
            });
        }
        if !cfg.committee.contains(&key.address()) {
            return Err(ConsensusError::NotInCommittee);
        }
        Ok(Self {
            validator_id: key.address(),
            key,
            cfg,
            verifier,
            height: 1,
            round: 0,
            step: Step::NewHeight,
            locked: None,
            valid: None,
            mempool: Mempool::default(),
            vote_log: HashMap::new(),
            proposals: HashMap::new(),
            by_digest: HashMap::new(),
            validity: HashMap::new(),
            prevote_timer: HashSet::new(),
            precommit_timer: HashSet::new(),
            polka_seen: HashSet::new(),
            pol_checked: HashMap::new(),
            evidence: Vec::new(),
            ledger: Ledger::new(Block::genesis_bft()),
            alt_blocks: HashMap::new(),
        })
    }

    pub fn config(&self) -> &ConsensusConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &Ledger<IntraTx> {
        &self.ledger
    }

    pub fn evidence(&self) -> &[Evidence] {
        &self.evidence
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn locked_block(&self) -> Option<&Block> {
        self.locked.as_ref().map(|(_, p)| &p.block)
    }

    pub fn is_proposer(&self) -> bool {
        self.cfg.proposer(self.height, self.round) == self.validator_id
    }

    /// Timers lost while crashed: the current round deadline, or the
    /// height start when waiting between heights.
    pub fn rearm(&self) -> Vec<Output> {
        let (kind, after) = if self.step == Step::NewHeight {
            (TimeoutKind::StartHeight, self.cfg.commit_delay_ms)
        } else {
            (TimeoutKind::Round, 5 * self.cfg.step_timeout(self.round))
        };
        vec![Output::Schedule {
            timeout: Timeout {
                kind,
                height: self.height,
                round: self.round,
            },
            after,
        }]
    }

    /// Admits a client transaction; `false` if invalid, foreign, committed
    /// or already pending.
    pub fn submit(&mut self, tx: IntraTx) -> bool {
        let d = tx.digest();
        if tx.zone_id != self.cfg.zone_id
            || self.ledger.contains_tx(&d)
            || self.mempool.contains(&d)
            || !tx.verify(self.verifier.as_ref())
        {
            return false;
        }
        self.mempool.insert(tx);
        true
    }

    /// Starts height 1 round 0 immediately.
    pub fn start(&mut self, now: Millis) -> Vec<Output> {
        let mut out = Vec::new();
        self.start_round(0, now, &mut out);
        self.evaluate(now, &mut out);
        out
    }

    /// Builds this round's block when this validator is the proposer.
    pub fn propose(&mut self, now: Millis) -> Option<(Block, ConsensusMsg)> {
        if !self.is_proposer() {
            return None;
        }
        let proposal = match &self.valid {
            Some((vr, p, pol)) => Arc::new(Proposal {
                block: p.block.clone(),
                txs: p.txs.clone(),
                valid_round: Some(*vr),
                pol: pol.clone(),
            }),
            None => {
                let txs = self.mempool.first(self.cfg.block_capacity);
                let block = Block {
                    parent: self.ledger.tip_digest(),
                    height: self.height,
                    tx_root: tx_root(txs.iter().map(LedgerTx::digest)),
                    timestamp: now,
                    seal: Seal::Bft {
                        proposer: self.validator_id,
                        round: self.round,
                        quorum: Vec::new(),
                    },
                };
                Arc::new(Proposal {
                    block,
                    txs,
                    valid_round: None,
                    pol: Vec::new(),
                })
            }
        };
        let msg = ConsensusMsg::propose(&self.key, self.height, self.round, proposal.clone());
        Some((proposal.block.clone(), msg))
    }

    fn start_round(&mut self, round: u32, now: Millis, out: &mut Vec<Output>) {
        self.round = round;
        self.step = Step::Propose;
        let h = self.height;
        out.push(Output::Schedule {
            timeout: Timeout {
                kind: TimeoutKind::Round,
                height: h,
                round,
            },
            after: 5 * self.cfg.step_timeout(round),
        });
        if let Some((_, msg)) = self.propose(now) {
            self.record(msg.clone());
            out.push(Output::Broadcast(msg));
        } else {
            out.push(Output::Schedule {
                timeout: Timeout {
                    kind: TimeoutKind::Propose,
                    height: h,
                    round,
                },
                after: self.cfg.step_timeout(round) + self.cfg.round_timeout_ms,
            });
        }
    }

    /// Stores a message; `false` if it duplicates or equivocates.
    fn record(&mut self, msg: ConsensusMsg) -> bool {
        let slot = self
            .vote_log
            .entry((msg.height, msg.round, msg.kind))
            .or_default();
        if let Some(prev) = slot.get(&msg.sender) {
            if prev.block_digest != msg.block_digest {
                self.evidence.push(Evidence {
                    first: prev.clone(),
                    second: msg,
                });
            }
            return false;
        }
        if let Some(p) = &msg.proposal {
            let d = p.block.digest();
            self.proposals.insert((msg.height, msg.round), p.clone());
            self.by_digest.entry(d).or_insert_with(|| p.clone());
        }
        slot.insert(msg.sender, msg);
        true
    }

    pub fn handle_msg(&mut self, msg: ConsensusMsg, now: Millis) -> Vec<Output> {
        let mut out = Vec::new();
        if msg.height < self.height
            || !self.cfg.committee.contains(&msg.sender)
            || !msg.verify(self.verifier.as_ref())
        {
            return out;
        }
        if msg.kind == MsgKind::Proposal && msg.sender != self.cfg.proposer(msg.height, msg.round)
        {
            return out;
        }
        let round = msg.round;
        let height = msg.height;
        if !self.record(msg) {
            return out;
        }
        if height == self.height && round > self.round && self.step != Step::NewHeight {
            let senders: HashSet<Address> = [MsgKind::Proposal, MsgKind::Prevote, MsgKind::Precommit]
                .iter()
                .filter_map(|k| self.vote_log.get(&(height, round, *k)))
                .flat_map(|m| m.keys().copied())
                .collect();
            if senders.len() > self.cfg.f {
                self.start_round(round, now, &mut out);
            }
        }
        self.evaluate(now, &mut out);
        out
    }

    pub fn on_timeout(&mut self, t: Timeout, now: Millis) -> Vec<Output> {
        let mut out = Vec::new();
        if t.height != self.height {
            return out;
        }
        match t.kind {
            TimeoutKind::StartHeight => {
                if self.step == Step::NewHeight {
                    self.start_round(0, now, &mut out);
                }
            }
            TimeoutKind::Propose => {
                if t.round == self.round && self.step == Step::Propose {
                    self.cast(MsgKind::Prevote, None, &mut out);
                    self.step = Step::Prevote;
                }
            }
            TimeoutKind::Prevote => {
                if t.round == self.round && self.step == Step::Prevote {
                    self.cast(MsgKind::Precommit, None, &mut out);
                    self.step = Step::Precommit;
                }
            }
            TimeoutKind::Precommit => {
                if t.round == self.round && self.step != Step::NewHeight {
                    self.start_round(t.round + 1, now, &mut out);
                }
            }
            TimeoutKind::Round => {
                if t.round == self.round && self.step != Step::NewHeight {
                    if self.step == Step::Propose {
                        self.cast(MsgKind::Prevote, None, &mut out);
                        self.step = Step::Prevote;
                    }
                    if self.step == Step::Prevote {
                        self.cast(MsgKind::Precommit, None, &mut out);
                        self.step = Step::Precommit;
                    }
                    self.start_round(t.round + 1, now, &mut out);
                }
            }
        }
        self.evaluate(now, &mut out);
        out
    }

    fn cast(&mut self, kind: MsgKind, digest: Option<Digest>, out: &mut Vec<Output>) {
        let msg = ConsensusMsg::vote(&self.key, kind, self.height, self.round, digest);
        if self.record(msg.clone()) {
            out.push(Output::Broadcast(msg));
        }
    }

    fn count(&self, round: u32, kind: MsgKind, digest: Option<&Digest>) -> usize {
        self.vote_log
            .get(&(self.height, round, kind))
            .map_or(0, |m| {
                m.values()
                    .filter(|v| v.block_digest.as_ref() == digest)
                    .count()
            })
    }

    fn count_any(&self, round: u32, kind: MsgKind) -> usize {
        self.vote_log
            .get(&(self.height, round, kind))
            .map_or(0, BTreeMap::len)
    }

    fn prevotes_for(&self, round: u32, d: &Digest) -> Vec<ConsensusMsg> {
        self.vote_log
            .get(&(self.height, round, MsgKind::Prevote))
            .map_or_else(Vec::new, |m| {
                m.values()
                    .filter(|v| v.block_digest.as_ref() == Some(d))
                    .cloned()
                    .collect()
            })
    }

    /// A prevote quorum for `p` in round `vr`, seen directly or proven by
    /// the votes the proposal carries. A proven quorum newer than our own
    /// valid block replaces it.
    fn has_polka(&mut self, vr: u32, p: &Arc<Proposal>) -> bool {
        let d = p.block.digest();
        if self.count(vr, MsgKind::Prevote, Some(&d)) >= self.cfg.quorum() {
            return true;
        }
        if let Some(ok) = self.pol_checked.get(&(vr, d)) {
            return *ok;
        }
        let mut signers = HashSet::new();
        for v in &p.pol {
            if v.kind == MsgKind::Prevote
                && v.height == self.height
                && v.round == vr
                && v.block_digest == Some(d)
                && self.cfg.committee.contains(&v.sender)
                && v.verify(self.verifier.as_ref())
            {
                signers.insert(v.sender);
            }
        }
        let ok = signers.len() >= self.cfg.quorum();
        self.pol_checked.insert((vr, d), ok);
        if ok && self.valid.as_ref().is_none_or(|(r, _, _)| *r < vr) && self.is_valid(p) {
            self.valid = Some((vr, p.clone(), p.pol.clone()));
        }
        ok
    }

    fn is_valid(&mut self, p: &Proposal) -> bool {
        let d = p.block.digest();
        if let Some(v) = self.validity.get(&d) {
            return *v;
        }
        let ok = self.check_block(p);
        self.validity.insert(d, ok);
        ok
    }

    fn check_block(&self, p: &Proposal) -> bool {
        let b = &p.block;
        let Seal::Bft { proposer, .. } = &b.seal else {
            return false;
        };
        if b.height != self.height
            || b.parent != self.ledger.tip_digest()
            || !self.cfg.committee.contains(proposer)
            || p.txs.len() > self.cfg.block_capacity
            || b.tx_root != tx_root(p.txs.iter().map(LedgerTx::digest))
        {
            return false;
        }
        let mut seen = HashSet::with_capacity(p.txs.len());
        p.txs.iter().all(|tx| {
            let d = tx.digest();
            seen.insert(d)
                && !self.ledger.contains_tx(&d)
                && tx.zone_id == self.cfg.zone_id
                && (self.mempool.contains(&d) || tx.verify(self.verifier.as_ref()))
        })
    }

    fn evaluate(&mut self, now: Millis, out: &mut Vec<Output>) {
        loop {
            if self.try_commit(now, out) {
                continue;
            }
            if self.step == Step::NewHeight {
                return;
            }
            if !self.apply_round_rules(out) {
                return;
            }
        }
    }

    /// One pass over the per-round rules; `true` if anything changed.
    fn apply_round_rules(&mut self, out: &mut Vec<Output>) -> bool {
        let h = self.height;
        let r = self.round;
        let q = self.cfg.quorum();
        let proposal = self.proposals.get(&(h, r)).cloned();

        if self.step == Step::Propose {
            if let Some(p) = &proposal {
                let d = p.block.digest();
                match p.valid_round {
                    None => {
                        let ok = self.is_valid(p)
                            && self.locked.as_ref().is_none_or(|(_, l)| l.block.digest() == d);
                        self.cast(MsgKind::Prevote, ok.then_some(d), out);
                        self.step = Step::Prevote;
                        return true;
                    }
                    Some(vr) if vr < r && self.has_polka(vr, p) => {
                        let ok = self.is_valid(p)
                            && self
                                .locked
                                .as_ref()
                                .is_none_or(|(lr, l)| *lr <= vr || l.block.digest() == d);
                        self.cast(MsgKind::Prevote, ok.then_some(d), out);
                        self.step = Step::Prevote;
                        return true;
                    }
                    _ => {}
                }
            }
        }

        if self.step == Step::Prevote
            && self.count_any(r, MsgKind::Prevote) >= q
            && self.prevote_timer.insert(r)
        {
            out.push(Output::Schedule {
                timeout: Timeout {
                    kind: TimeoutKind::Prevote,
                    height: h,
                    round: r,
                },
                after: self.cfg.step_timeout(r),
            });
        }

        if self.step >= Step::Prevote && !self.polka_seen.contains(&r) {
            if let Some(p) = &proposal {
                let d = p.block.digest();
                if self.count(r, MsgKind::Prevote, Some(&d)) >= q && self.is_valid(p) {
                    self.polka_seen.insert(r);
                    if self.step == Step::Prevote {
                        self.locked = Some((r, p.clone()));
                        self.cast(MsgKind::Precommit, Some(d), out);
                        self.step = Step::Precommit;
                    }
                    let pol = self.prevotes_for(r, &d);
                    self.valid = Some((r, p.clone(), pol));
                    return true;
                }
            }
        }

        if self.step == Step::Prevote && self.count(r, MsgKind::Prevote, None) >= q {
            self.cast(MsgKind::Precommit, None, out);
            self.step = Step::Precommit;
            return true;
        }

        if self.count_any(r, MsgKind::Precommit) >= q && self.precommit_timer.insert(r) {
            out.push(Output::Schedule {
                timeout: Timeout {
                    kind: TimeoutKind::Precommit,
                    height: h,
                    round: r,
                },
                after: self.cfg.step_timeout(r),
            });
        }
        false
    }

    fn try_commit(&mut self, now: Millis, out: &mut Vec<Output>) -> bool {
        let h = self.height;
        let q = self.cfg.quorum();
        let mut decided: Option<(u32, Digest)> = None;
        let mut rounds: Vec<u32> = self
            .vote_log
            .keys()
            .filter(|(vh, _, k)| *vh == h && *k == MsgKind::Precommit)
            .map(|(_, r, _)| *r)
            .collect();
        rounds.sort_unstable();
        'outer: for r in rounds {
            let votes = &self.vote_log[&(h, r, MsgKind::Precommit)];
            let mut tally: BTreeMap<Digest, usize> = BTreeMap::new();
            for v in votes.values() {
                if let Some(d) = v.block_digest {
                    *tally.entry(d).or_default() += 1;
                }
            }
            for (d, n) in tally {
                if n >= q && self.by_digest.contains_key(&d) {
                    decided = Some((r, d));
                    break 'outer;
                }
            }
        }
        let Some((r, d)) = decided else {
            return false;
        };
        let p = self.by_digest[&d].clone();
        if !self.is_valid(&p) {
            return false;
        }
        let mut quorum: Vec<QuorumVote> = self.vote_log[&(h, r, MsgKind::Precommit)]
            .values()
            .filter(|v| v.block_digest == Some(d))
            .map(|v| QuorumVote {
                validator: v.sender,
                signature: v.signature,
            })
            .collect();
        quorum.sort_by_key(|v| v.validator);
        let mut block = p.block.clone();
        if let Seal::Bft {
            round, quorum: qc, ..
        } = &mut block.seal
        {
            *round = r;
            *qc = quorum;
        }
        self.finalize(block, p.txs.clone(), now, out);
        true
    }

    fn finalize(&mut self, block: Block, txs: Vec<IntraTx>, _now: Millis, out: &mut Vec<Output>) {
        for tx in &txs {
            self.mempool.remove(&tx.digest());
        }
        self.ledger
            .append(block.clone(), txs.clone())
            .expect("validated block extends the ledger");
        out.push(Output::Commit(Arc::new(CommittedBlock {
            zone_id: self.cfg.zone_id,
            block,
            txs,
        })));
        let done = self.height;
        self.height += 1;
        self.round = 0;
        self.step = Step::NewHeight;
        self.locked = None;
        self.valid = None;
        self.pol_checked.clear();
        self.validity.clear();
        self.by_digest.clear();
        self.prevote_timer.clear();
        self.precommit_timer.clear();
        self.polka_seen.clear();
        self.alt_blocks.clear();
        self.vote_log.retain(|(h, _, _), _| *h > done);
        self.proposals.retain(|(h, _), _| *h > done);
        for ((h, _), p) in &self.proposals {
            if *h == self.height {
                self.by_digest.insert(p.block.digest(), p.clone());
            }
        }
        out.push(Output::Schedule {
            timeout: Timeout {
                kind: TimeoutKind::StartHeight,
                height: self.height,
                round: 0,
            },
            after: self.cfg.commit_delay_ms,
        });
    }

    /// Adopts a block finalized elsewhere, checked against its quorum
    /// certificate. Used by validators catching up after missing a height.
    pub fn apply_synced(
        &mut self,
        block: Block,
        txs: Vec<IntraTx>,
        now: Millis,
    ) -> Result<Vec<Output>, ConsensusError> {
        if block.height != self.height
            || block.parent != self.ledger.tip_digest()
            || block.tx_root != tx_root(txs.iter().map(LedgerTx::digest))
            || !block.quorum_valid(&self.cfg.committee, self.cfg.f, self.verifier.as_ref())
        {
            return Err(ConsensusError::BadSyncBlock);
        }
        let mut out = Vec::new();
        self.finalize(block, txs, now, &mut out);
        self.evaluate(now, &mut out);
        Ok(out)
    }

    /// Conflicting variant of an outgoing message, for equivocation tests.
    /// Proposals get a sibling block with no transactions; votes for a block
    /// switch to its sibling when one exists and to nil otherwise.
    pub fn equivocate(&mut self, msg: &ConsensusMsg) -> Option<ConsensusMsg> {
        match msg.kind {
            MsgKind::Proposal => {
                let p = msg.proposal.as_ref()?;
                let alt = self.alt_for(p);
                Some(ConsensusMsg::propose(&self.key, msg.height, msg.round, alt))
            }
            MsgKind::Prevote | MsgKind::Precommit => {
                let d = msg.block_digest?;
                let alt = self.alt_blocks.get(&d).map(|p| p.block.digest());
                Some(ConsensusMsg::vote(&self.key, msg.kind, msg.height, msg.round, alt))
            }
        }
    }

    fn alt_for(&mut self, p: &Arc<Proposal>) -> Arc<Proposal> {
        let d = p.block.digest();
        if let Some(alt) = self.alt_blocks.get(&d) {
            return alt.clone();
        }
        let mut block = p.block.clone();
        block.timestamp += 1;
        block.tx_root = tx_root(std::iter::empty());
        let alt = Arc::new(Proposal {
            block,
            txs: Vec::new(),
            valid_round: p.valid_round,
            pol: p.pol.clone(),
        });
        self.alt_blocks.insert(d, alt.clone());
        alt
    }

    /// Digest of the committed block at `height`, if any.
    pub fn committed_digest(&self, height: u64) -> Option<Digest> {
        self.ledger.block_digest(height)
    }

    /// Running digest over the committed chain, for determinism checks.
    pub fn ledger_fingerprint(&self) -> Digest {
        let mut enc = Encoder::new();
        for (b, _) in self.ledger.blocks() {
            enc.put(&b.digest());
        }
        hash_parts(&[&enc.finish()])
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;

    struct Net {
        nodes: Vec<ValidatorState>,
        queue: VecDeque<(usize, ConsensusMsg)>,
        timers: Vec<(usize, Timeout)>,
        commits: Vec<(usize, Arc<CommittedBlock>)>,
        down: HashSet<usize>,
    }

    impl Net {
        fn new(n: usize, f: usize) -> Self {
            let keys: Vec<_> = (0..n)
                .map(|i| Keypair::from_seed(format!("v{i}").as_bytes()))
                .collect();
            let mut ring = Keyring::new();
            keys.iter().for_each(|k| ring.register(k));
            ring.register(&Keypair::from_seed(b"client"));
            let ring = Arc::new(ring);
            let committee: Vec<_> = keys.iter().map(Keypair::address).collect();
            let cfg = ConsensusConfig::new(1, committee, f).unwrap();
            let nodes = keys
                .into_iter()
                .map(|k| ValidatorState::new(k, cfg.clone(), ring.clone()).unwrap())
                .collect();
            Self {
                nodes,
                queue: VecDeque::new(),
                timers: Vec::new(),
                commits: Vec::new(),
                down: HashSet::new(),
            }
        }

        fn absorb(&mut self, from: usize, outs: Vec<Output>) {
            if self.down.contains(&from) {
                return;
            }
            for o in outs {
                match o {
                    Output::Broadcast(m) => {
                        for to in 0..self.nodes.len() {
                            if to != from {
                                self.queue.push_back((to, m.clone()));
                            }
                        }
                    }
                    Output::Schedule { timeout, .. } => self.timers.push((from, timeout)),
                    Output::Commit(c) => self.commits.push((from, c)),
                }
            }
        }

        fn start(&mut self) {
            for i in 0..self.nodes.len() {
                let outs = self.nodes[i].start(0);
                self.absorb(i, outs);
            }
        }

        fn drain(&mut self) {
            while let Some((to, m)) = self.queue.pop_front() {
                if self.down.contains(&to) {
                    continue;
                }
                let outs = self.nodes[to].handle_msg(m, 0);
                self.absorb(to, outs);
            }
        }

        fn fire(&mut self, kind: TimeoutKind) {
            let due: Vec<_> = self.timers.iter().filter(|(_, t)| t.kind == kind).copied().collect();
            self.timers.retain(|(_, t)| t.kind != kind);
            for (i, t) in due {
                if !self.down.contains(&i) {
                    let outs = self.nodes[i].on_timeout(t, 0);
                    self.absorb(i, outs);
                }
            }
        }

        fn submit(&mut self, txs: &[IntraTx]) {
            for v in &mut self.nodes {
                for tx in txs {
                    v.submit(tx.clone());
                }
            }
        }
    }

    fn txs(n: usize) -> Vec<IntraTx> {
        let kp = Keypair::from_seed(b"client");
        (0..n)
            .map(|i| IntraTx::new(&kp, 1, vec![1, 2, 3], i as u64).unwrap())
            .collect()
    }

    #[test]
    fn rejects_undersized_committee() {
        let committee: Vec<_> = (0..3)
            .map(|i| Keypair::from_seed(&[i]).address())
            .collect();
        assert_eq!(
            ConsensusConfig::new(1, committee, 1).unwrap_err(),
            ConsensusError::CommitteeTooSmall { n: 3, f: 1 }
        );
    }

    #[test]
    fn proposer_rotates() {
        let net = Net::new(4, 1);
        let cfg = net.nodes[0].config();
        let seq: Vec<_> = (0..8).map(|h| cfg.proposer(h, 0)).collect();
        for h in 0..8 {
            assert_eq!(seq[h], cfg.committee[h % 4]);
        }
        assert_eq!(cfg.proposer(1, 2), cfg.committee[3]);
    }

    #[test]
    fn timeout_tag_roundtrip() {
        let t = Timeout {
            kind: TimeoutKind::Precommit,
            height: 123_456,
            round: 7,
        };
        assert_eq!(Timeout::from_tag(t.tag()), Some(t));
        assert_eq!(Timeout::from_tag(0), None);
    }

    #[test]
    fn happy_path_commits_capped_block() {
        let mut net = Net::new(4, 1);
        net.submit(&txs(1500));
        net.start();
        net.drain();
        assert_eq!(net.commits.len(), 4);
        let first = &net.commits[0].1;
        assert_eq!(first.txs.len(), 1000);
        assert!(net.commits.iter().all(|(_, c)| c.block.digest() == first.block.digest()));
        assert!(first
            .block
            .quorum_valid(&net.nodes[0].config().committee, 1, &{
                let mut r = Keyring::new();
                (0..4).for_each(|i| r.register(&Keypair::from_seed(format!("v{i}").as_bytes())));
                r
            }));
        for v in &net.nodes {
            assert_eq!(v.mempool_len(), 500);
            assert_eq!(v.height, 2);
            assert_eq!(v.step, Step::NewHeight);
        }
        net.fire(TimeoutKind::StartHeight);
        net.drain();
        assert_eq!(net.commits.len(), 8);
        assert_eq!(net.commits[4].1.txs.len(), 500);
    }

    #[test]
    fn empty_mempool_commits_empty_block() {
        let mut net = Net::new(4, 1);
        net.start();
        net.drain();
        assert_eq!(net.commits.len(), 4);
        assert!(net.commits[0].1.txs.is_empty());
        assert_eq!(net.commits[0].1.block.tx_root, Digest::ZERO);
    }

    #[test]
    fn tolerates_one_crash() {
        let mut net = Net::new(4, 1);
        net.submit(&txs(10));
        // Proposer of height 1 round 0 is committee[1].
        net.down.insert(1);
        net.start();
        net.drain();
        assert!(net.commits.is_empty());
        net.fire(TimeoutKind::Propose);
        net.drain();
        net.fire(TimeoutKind::Prevote);
        net.drain();
        net.fire(TimeoutKind::Precommit);
        net.drain();
        let live: Vec<_> = (0..4).filter(|i| *i != 1).collect();
        for i in &live {
            assert_eq!(net.nodes[*i].height, 2, "validator {i}");
        }
        assert_eq!(net.commits.len(), 3);
        assert_eq!(net.commits[0].1.txs.len(), 10);
        let Seal::Bft { round, .. } = net.commits[0].1.block.seal else {
            panic!()
        };
        assert_eq!(round, 1);
    }

    #[test]
    fn two_precommits_then_timeout_advances_round() {
        let mut net = Net::new(4, 1);
        net.start();
        // Withhold everything; feed validator 0 only two precommits.
        net.queue.clear();
        let keys: Vec<_> = (0..4)
            .map(|i| Keypair::from_seed(format!("v{i}").as_bytes()))
            .collect();
        let d = hash_parts(&[b"some block"]);
        for k in &keys[2..4] {
            let m = ConsensusMsg::vote(k, MsgKind::Precommit, 1, 0, Some(d));
            net.nodes[0].handle_msg(m, 0);
        }
        assert!(net.nodes[0].ledger().tip_height() == 0);
        assert_eq!(net.nodes[0].round, 0);
        let outs = net.nodes[0].on_timeout(
            Timeout {
                kind: TimeoutKind::Round,
                height: 1,
                round: 0,
            },
            0,
        );
        assert_eq!(net.nodes[0].round, 1);
        assert!(outs
            .iter()
            .any(|o| matches!(o, Output::Broadcast(m) if m.kind == MsgKind::Prevote && m.block_digest.is_none())));
    }

    #[test]
    fn three_precommits_commit_without_own_vote() {
        let mut net = Net::new(4, 1);
        net.start();
        let prop = net
            .queue
            .iter()
            .find(|(_, m)| m.kind == MsgKind::Proposal)
            .map(|(_, m)| m.clone())
            .unwrap();
        net.queue.clear();
        let d = prop.block_digest.unwrap();
        net.nodes[0].handle_msg(prop, 0);
        let keys: Vec<_> = (1..4)
            .map(|i| Keypair::from_seed(format!("v{i}").as_bytes()))
            .collect();
        let mut commits = 0;
        for k in &keys {
            let outs = net.nodes[0].handle_msg(ConsensusMsg::vote(k, MsgKind::Precommit, 1, 0, Some(d)), 0);
            commits += outs.iter().filter(|o| matches!(o, Output::Commit(_))).count();
        }
        assert_eq!(commits, 1);
        assert_eq!(net.nodes[0].committed_digest(1), Some(d));
    }

    #[test]
    fn equivocation_is_recorded_and_safety_holds() {
        let mut net = Net::new(4, 1);
        net.start();
        let keys: Vec<_> = (0..4)
            .map(|i| Keypair::from_seed(format!("v{i}").as_bytes()))
            .collect();
        let a = hash_parts(&[b"a"]);
        let b = hash_parts(&[b"b"]);
        net.nodes[0].handle_msg(ConsensusMsg::vote(&keys[3], MsgKind::Prevote, 1, 0, Some(a)), 0);
        net.nodes[0].handle_msg(ConsensusMsg::vote(&keys[3], MsgKind::Prevote, 1, 0, Some(b)), 0);
        assert_eq!(net.nodes[0].evidence().len(), 1);
        net.drain();
        let digests: HashSet<_> = net.commits.iter().map(|(_, c)| c.block.digest()).collect();
        assert_eq!(digests.len(), 1);
    }

    #[test]
    fn forged_votes_are_ignored() {
        let mut net = Net::new(4, 1);
        let outsider = Keypair::from_seed(b"outsider");
        let d = hash_parts(&[b"x"]);
        let mut m = ConsensusMsg::vote(&outsider, MsgKind::Precommit, 1, 0, Some(d));
        assert!(net.nodes[0].handle_msg(m.clone(), 0).is_empty());
        m.sender = net.nodes[1].validator_id;
        assert!(net.nodes[0].handle_msg(m, 0).is_empty());
    }

    #[test]
    fn sync_adopts_certified_block() {
        let mut net = Net::new(4, 1);
        net.down.insert(3);
        net.submit(&txs(5));
        net.start();
        net.drain();
        let c = net.commits[0].1.clone();
        assert_eq!(net.nodes[3].height, 1);
        let outs = net.nodes[3].apply_synced(c.block.clone(), c.txs.clone(), 0).unwrap();
        assert!(outs.iter().any(|o| matches!(o, Output::Commit(_))));
        assert_eq!(net.nodes[3].height, 2);
        assert_eq!(net.nodes[3].mempool_len(), 0);
        let mut forged = c.block.clone();
        forged.timestamp += 1;
        assert!(net.nodes[3].apply_synced(forged, vec![], 0).is_err());
    }
}
