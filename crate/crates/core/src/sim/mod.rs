//! Deterministic discrete-event network simulator.
//!
//! Nodes are [`Process`] state machines. The simulator owns the virtual
//! clock, a single event queue ordered by `(at, seq)`, per-class link delay
//! models and the fault state of every node. Given the same seed and the
//! same sequence of calls, the event trace is identical run to run.

mod fault;
mod link;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub use fault::{Behavior, Fault, FaultEntry, FaultSchedule};
pub use link::{LinkClass, LinkModel};

use crate::crypto::Digest;

/// Virtual time in milliseconds.
pub type Millis = u64;
pub type NodeId = usize;

/// Zone 0 marks public nodes that belong to no domain.
pub const PUBLIC_ZONE: u32 = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("cannot run backwards to {target} from {now}")]
    TimeReversal { now: Millis, target: Millis },
}

/// Record emitted by a process, stamped with time and origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Record<E> {
    pub at: Millis,
    pub node: NodeId,
    pub event: E,
}

pub trait Process<M, E> {
    fn on_start(&mut self, _ctx: &mut Ctx<'_, M, E>) {}

    fn on_message(&mut self, ctx: &mut Ctx<'_, M, E>, from: NodeId, msg: M);

    fn on_timer(&mut self, ctx: &mut Ctx<'_, M, E>, tag: u64);

    /// Called when a crashed node comes back. Timers set before the crash
    /// were lost, so this is where they get re-armed.
    fn on_recover(&mut self, _ctx: &mut Ctx<'_, M, E>) {}

    /// Conflicting variant of `msg` for an equivocating node, if the message
    /// kind has one.
    fn equivocate(&mut self, _msg: &M) -> Option<M> {
        None
    }

    /// Lets the harness read node state back after a run.
    fn as_any(&self) -> &dyn std::any::Any;
}

enum Action<M> {
    Send { to: NodeId, msg: M },
    Timer { after: Millis, tag: u64 },
}

/// Handle a process uses to act on the world during a callback.
pub struct Ctx<'a, M, E> {
    now: Millis,
    me: NodeId,
    rng: &'a mut ChaCha8Rng,
    actions: &'a mut Vec<Action<M>>,
    records: &'a mut Vec<Record<E>>,
}

impl<'a, M, E> Ctx<'a, M, E> {
    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn me(&self) -> NodeId {
        self.me
    }

    /// The node's private deterministic random stream.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn send(&mut self, to: NodeId, msg: M) {
        self.actions.push(Action::Send { to, msg });
    }

    pub fn timer(&mut self, after: Millis, tag: u64) {
        self.actions.push(Action::Timer { after, tag });
    }

    pub fn emit(&mut self, event: E) {
        self.records.push(Record {
            at: self.now,
            node: self.me,
            event,
        });
    }
}

enum Payload<M> {
    Start,
    Message { from: NodeId, msg: M },
    Timer(u64),
    Fault(Fault),
}

struct Event<M> {
    at: Millis,
    seq: u64,
    target: NodeId,
    payload: Payload<M>,
}

impl<M> PartialEq for Event<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<M> Eq for Event<M> {}

impl<M> PartialOrd for Event<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Event<M> {
    // min-heap on (at, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct Slot<M, E> {
    process: Box<dyn Process<M, E>>,
    zone: u32,
    crashed: bool,
    behavior: Option<Behavior>,
    /// 0 = not partitioned, otherwise group 1 or 2.
    group: u8,
    rng: ChaCha8Rng,
}

/// Observer for every message that enters the network.
pub type Tap<M> = Box<dyn FnMut(Millis, NodeId, NodeId, LinkClass, &M)>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimStats {
    pub processed: u64,
    pub dropped_crashed: u64,
    pub dropped_link: u64,
    pub dropped_partition: u64,
    /// Messages an equivocating node replaced with a conflicting twin.
    pub equivocated: u64,
}

pub struct Simulator<M, E> {
    now: Millis,
    seq: u64,
    seed: u64,
    queue: BinaryHeap<Event<M>>,
    slots: Vec<Slot<M, E>>,
    link: LinkModel,
    net_rng: ChaCha8Rng,
    records: Vec<Record<E>>,
    trace: Sha256,
    stats: SimStats,
    tap: Option<Tap<M>>,
}

impl<M: Clone, E> Simulator<M, E> {
    pub fn new(seed: u64, link: LinkModel) -> Self {
        Self {
            now: 0,
            seq: 0,
            seed,
            queue: BinaryHeap::new(),
            slots: Vec::new(),
            link,
            net_rng: ChaCha8Rng::seed_from_u64(seed),
            records: Vec::new(),
            trace: Sha256::new(),
            stats: SimStats::default(),
            tap: None,
        }
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn set_tap(&mut self, tap: Tap<M>) {
        self.tap = Some(tap);
    }

    pub fn add_node(&mut self, zone: u32, process: Box<dyn Process<M, E>>) -> NodeId {
        let id = self.slots.len();
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_be_bytes());
        seed[8..16].copy_from_slice(&(id as u64).to_be_bytes());
        self.slots.push(Slot {
            process,
            zone,
            crashed: false,
            behavior: None,
            group: 0,
            rng: ChaCha8Rng::from_seed(seed),
        });
        self.push(self.now, id, Payload::Start);
        id
    }

    pub fn node_count(&self) -> usize {
        self.slots.len()
    }

    pub fn zone_of(&self, node: NodeId) -> Option<u32> {
        self.slots.get(node).map(|s| s.zone)
    }

    pub fn is_crashed(&self, node: NodeId) -> bool {
        self.slots.get(node).is_some_and(|s| s.crashed)
    }

    pub fn behavior(&self, node: NodeId) -> Option<Behavior> {
        self.slots.get(node).and_then(|s| s.behavior)
    }

    pub fn process(&self, node: NodeId) -> Option<&dyn Process<M, E>> {
        self.slots.get(node).map(|s| s.process.as_ref())
    }

    /// Typed read access to a node's state.
    pub fn inspect<T: 'static>(&self, node: NodeId) -> Option<&T> {
        self.slots
            .get(node)
            .and_then(|s| s.process.as_any().downcast_ref::<T>())
    }

    pub fn link_class(&self, a: NodeId, b: NodeId) -> LinkClass {
        let (za, zb) = (self.slots[a].zone, self.slots[b].zone);
        if za == zb && za != PUBLIC_ZONE {
            LinkClass::Intra
        } else {
            LinkClass::Inter
        }
    }

    fn push(&mut self, at: Millis, target: NodeId, payload: Payload<M>) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Event {
            at,
            seq,
            target,
            payload,
        });
    }

    /// Queues a message from outside any process, delivered at `at`.
    pub fn schedule_message(&mut self, at: Millis, from: NodeId, to: NodeId, msg: M) {
        self.push(at.max(self.now), to, Payload::Message { from, msg });
    }

    pub fn schedule_timer(&mut self, at: Millis, node: NodeId, tag: u64) {
        self.push(at.max(self.now), node, Payload::Timer(tag));
    }

    pub fn schedule_fault(&mut self, entry: FaultEntry) -> Result<(), SimError> {
        self.check_fault_nodes(&entry)?;
        self.push(entry.at.max(self.now), entry.node, Payload::Fault(entry.fault));
        Ok(())
    }

    pub fn schedule_faults(&mut self, schedule: &FaultSchedule) -> Result<(), SimError> {
        for e in &schedule.entries {
            self.check_fault_nodes(e)?;
        }
        for e in &schedule.entries {
            self.schedule_fault(e.clone())?;
        }
        Ok(())
    }

    fn check_fault_nodes(&self, entry: &FaultEntry) -> Result<(), SimError> {
        let n = self.slots.len();
        match &entry.fault {
            Fault::Partition { a, b } => {
                if let Some(bad) = a.iter().chain(b).find(|&&x| x >= n) {
                    return Err(SimError::UnknownNode(*bad));
                }
            }
            Fault::Heal => {}
            _ if entry.node >= n => return Err(SimError::UnknownNode(entry.node)),
            _ => {}
        }
        Ok(())
    }

    /// Applies a fault immediately.
    pub fn inject_fault(&mut self, node: NodeId, fault: Fault) -> Result<(), SimError> {
        self.check_fault_nodes(&FaultEntry {
            at: self.now,
            node,
            fault: fault.clone(),
        })?;
        self.apply_fault(node, fault);
        Ok(())
    }

    fn apply_fault(&mut self, node: NodeId, fault: Fault) {
        self.trace_word(b"F", node as u64);
        match fault {
            Fault::Crash => self.slots[node].crashed = true,
            Fault::Recover => {
                if self.slots[node].crashed {
                    self.slots[node].crashed = false;
                    self.invoke(node, |p, ctx| p.on_recover(ctx));
                }
            }
            Fault::Byzantine { behavior } => self.slots[node].behavior = Some(behavior),
            Fault::Partition { a, b } => {
                for s in &mut self.slots {
                    s.group = 0;
                }
                for x in a {
                    self.slots[x].group = 1;
                }
                for x in b {
                    self.slots[x].group = 2;
                }
            }
            Fault::Heal => {
                for s in &mut self.slots {
                    s.group = 0;
                }
            }
        }
    }

    fn partitioned(&self, a: NodeId, b: NodeId) -> bool {
        let (ga, gb) = (self.slots[a].group, self.slots[b].group);
        ga != 0 && gb != 0 && ga != gb
    }

    fn trace_word(&mut self, tag: &[u8], v: u64) {
        self.trace.update(tag);
        self.trace.update(v.to_be_bytes());
    }

    /// Digest over every processed event `(at, seq, target, kind)`.
    pub fn trace_digest(&self) -> Digest {
        Digest(self.trace.clone().finalize().into())
    }

    /// Processes every event with `at <= until`; returns how many were
    /// delivered to a live node.
    pub fn run_until(&mut self, until: Millis) -> Result<u64, SimError> {
        if until < self.now {
            return Err(SimError::TimeReversal {
                now: self.now,
                target: until,
            });
        }
        let before = self.stats.processed;
        while self.queue.peek().is_some_and(|e| e.at <= until) {
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.at;
            self.step(ev);
        }
        self.now = until;
        Ok(self.stats.processed - before)
    }

    fn step(&mut self, ev: Event<M>) {
        let Event {
            at,
            seq,
            target,
            payload,
        } = ev;
        if let Payload::Fault(fault) = payload {
            self.trace_word(b"T", at);
            self.trace_word(b"S", seq);
            self.apply_fault(target, fault);
            return;
        }
        if self.slots[target].crashed {
            self.stats.dropped_crashed += 1;
            return;
        }
        if let Payload::Message { from, .. } = &payload {
            if self.partitioned(*from, target) {
                self.stats.dropped_partition += 1;
                return;
            }
        }
        self.stats.processed += 1;
        self.trace_word(b"T", at);
        self.trace_word(b"S", seq);
        self.trace_word(b"N", target as u64);
        match payload {
            Payload::Start => self.invoke(target, |p, ctx| p.on_start(ctx)),
            Payload::Message { from, msg } => {
                self.trace_word(b"M", from as u64);
                self.invoke(target, |p, ctx| p.on_message(ctx, from, msg))
            }
            Payload::Timer(tag) => {
                self.trace_word(b"R", tag);
                self.invoke(target, |p, ctx| p.on_timer(ctx, tag))
            }
            Payload::Fault(_) => unreachable!("handled above"),
        }
    }

    fn invoke(&mut self, node: NodeId, f: impl FnOnce(&mut dyn Process<M, E>, &mut Ctx<'_, M, E>)) {
        let mut actions = Vec::new();
        {
            let slot = &mut self.slots[node];
            let mut ctx = Ctx {
                now: self.now,
                me: node,
                rng: &mut slot.rng,
                actions: &mut actions,
                records: &mut self.records,
            };
            f(slot.process.as_mut(), &mut ctx);
        }
        for action in actions {
            match action {
                Action::Timer { after, tag } => {
                    self.push(self.now + after, node, Payload::Timer(tag));
                }
                Action::Send { to, msg } => self.dispatch(node, to, msg),
            }
        }
    }

    fn dispatch(&mut self, from: NodeId, to: NodeId, msg: M) {
        if to >= self.slots.len() {
            return;
        }
        if to == from {
            self.push(self.now, to, Payload::Message { from, msg });
            return;
        }
        let mut msg = msg;
        let mut extra = 0;
        match self.slots[from].behavior {
            Some(Behavior::Silent) => return,
            Some(Behavior::Delay { hold_ms }) => extra = hold_ms,
            Some(Behavior::Equivocate) if to % 2 == 1 => {
                if let Some(alt) = self.slots[from].process.equivocate(&msg) {
                    msg = alt;
                    self.stats.equivocated += 1;
                }
            }
            _ => {}
        }
        if self.partitioned(from, to) {
            self.stats.dropped_partition += 1;
            return;
        }
        let class = self.link_class(from, to);
        let Some(delay) = self.link.sample(class, &mut self.net_rng) else {
            self.stats.dropped_link += 1;
            return;
        };
        if let Some(tap) = self.tap.as_mut() {
            tap(self.now, from, to, class, &msg);
        }
        self.push(self.now + delay + extra, to, Payload::Message { from, msg });
    }

    pub fn records(&self) -> &[Record<E>] {
        &self.records
    }

    pub fn take_records(&mut self) -> Vec<Record<E>> {
        std::mem::take(&mut self.records)
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Echoes pings back and records every delivery.
    struct Pinger {
        peer: NodeId,
        log: Vec<(Millis, u32)>,
    }

    impl Process<u32, (NodeId, u32)> for Pinger {
        fn on_start(&mut self, ctx: &mut Ctx<'_, u32, (NodeId, u32)>) {
            if ctx.me() == 0 {
                ctx.send(self.peer, 0);
                ctx.timer(1_000, 7);
            }
        }

        fn on_message(&mut self, ctx: &mut Ctx<'_, u32, (NodeId, u32)>, from: NodeId, msg: u32) {
            self.log.push((ctx.now(), msg));
            ctx.emit((from, msg));
            if msg < 20 {
                ctx.send(from, msg + 1);
            }
        }

        fn on_timer(&mut self, ctx: &mut Ctx<'_, u32, (NodeId, u32)>, tag: u64) {
            ctx.emit((usize::MAX, tag as u32));
        }

        fn equivocate(&mut self, msg: &u32) -> Option<u32> {
            Some(msg + 1_000)
        }

        fn as_any(&self) -> &dyn std::any::Any {
            self
        }
    }

    fn pair(seed: u64, zone_b: u32) -> Simulator<u32, (NodeId, u32)> {
        let mut sim = Simulator::new(seed, LinkModel::default());
        sim.add_node(1, Box::new(Pinger { peer: 1, log: vec![] }));
        sim.add_node(zone_b, Box::new(Pinger { peer: 0, log: vec![] }));
        sim
    }

    #[test]
    fn empty_queue_processes_nothing() {
        let mut sim: Simulator<u32, ()> = Simulator::new(1, LinkModel::default());
        assert_eq!(sim.run_until(1_000_000).unwrap(), 0);
        assert_eq!(sim.now(), 1_000_000);
    }

    #[test]
    fn cannot_run_backwards() {
        let mut sim = pair(1, 1);
        sim.run_until(100).unwrap();
        assert!(matches!(
            sim.run_until(50),
            Err(SimError::TimeReversal { .. })
        ));
    }

    #[test]
    fn same_seed_same_trace() {
        let mut a = pair(9, 2);
        let mut b = pair(9, 2);
        a.run_until(60_000).unwrap();
        b.run_until(60_000).unwrap();
        assert_eq!(a.trace_digest(), b.trace_digest());
        assert_eq!(a.records(), b.records());
        let mut c = pair(10, 2);
        c.run_until(60_000).unwrap();
        assert_ne!(a.trace_digest(), c.trace_digest());
    }

    #[test]
    fn delivery_is_never_early() {
        let mut sim = pair(3, 1);
        sim.run_until(60_000).unwrap();
        let p0 = sim.inspect::<Pinger>(0).unwrap();
        let p1 = sim.inspect::<Pinger>(1).unwrap();
        let mut all: Vec<_> = p0.log.iter().chain(&p1.log).copied().collect();
        all.sort_by_key(|x| x.1);
        assert_eq!(all.len(), 21);
        for w in all.windows(2) {
            // each hop takes between 10 and 200 ms on an intra link
            let gap = w[1].0 - w[0].0;
            assert!((10..=200).contains(&gap), "gap {gap}");
        }
    }

    #[test]
    fn crashed_node_receives_nothing_until_recover() {
        let mut sim = pair(4, 1);
        sim.inject_fault(1, Fault::Crash).unwrap();
        sim.run_until(10_000).unwrap();
        assert!(sim.inspect::<Pinger>(1).unwrap().log.is_empty());
        // its start event and the ping
        assert_eq!(sim.stats().dropped_crashed, 2);
        sim.inject_fault(1, Fault::Recover).unwrap();
        assert!(!sim.is_crashed(1));
    }

    #[test]
    fn crash_drops_in_flight_messages() {
        let mut sim = pair(4, 1);
        sim.schedule_fault(FaultEntry {
            at: 5,
            node: 1,
            fault: Fault::Crash,
        })
        .unwrap();
        sim.run_until(10_000).unwrap();
        assert!(sim.inspect::<Pinger>(1).unwrap().log.is_empty());
    }

    #[test]
    fn unknown_node_is_config_error() {
        let mut sim = pair(4, 1);
        assert_eq!(
            sim.inject_fault(9, Fault::Crash),
            Err(SimError::UnknownNode(9))
        );
    }

    #[test]
    fn partition_blocks_until_heal() {
        let mut sim = pair(5, 1);
        sim.inject_fault(
            0,
            Fault::Partition {
                a: vec![0],
                b: vec![1],
            },
        )
        .unwrap();
        sim.run_until(5_000).unwrap();
        assert!(sim.inspect::<Pinger>(1).unwrap().log.is_empty());
        sim.inject_fault(0, Fault::Heal).unwrap();
        sim.schedule_message(5_000, 0, 1, 3);
        sim.run_until(20_000).unwrap();
        assert!(!sim.inspect::<Pinger>(1).unwrap().log.is_empty());
    }

    #[test]
    fn silent_node_sends_nothing() {
        let mut sim = pair(6, 1);
        sim.inject_fault(0, Fault::Byzantine {
            behavior: Behavior::Silent,
        })
        .unwrap();
        sim.run_until(10_000).unwrap();
        assert!(sim.inspect::<Pinger>(1).unwrap().log.is_empty());
        // timers still fire
        assert!(sim.records().iter().any(|r| r.event.0 == usize::MAX));
    }

    #[test]
    fn equivocation_rewrites_messages_to_odd_peers() {
        let mut sim = pair(6, 1);
        sim.inject_fault(0, Fault::Byzantine {
            behavior: Behavior::Equivocate,
        })
        .unwrap();
        sim.run_until(10_000).unwrap();
        assert_eq!(sim.inspect::<Pinger>(1).unwrap().log[0].1, 1_000);
    }

    #[test]
    fn delay_behavior_holds_messages() {
        let mut sim = pair(6, 1);
        sim.inject_fault(0, Fault::Byzantine {
            behavior: Behavior::Delay { hold_ms: 190 },
        })
        .unwrap();
        sim.run_until(10_000).unwrap();
        let first = sim.inspect::<Pinger>(1).unwrap().log[0].0;
        assert!(first >= 200, "{first}");
    }

    #[test]
    fn tap_sees_link_class() {
        use std::cell::RefCell;
        use std::rc::Rc;
        let seen = Rc::new(RefCell::new(Vec::new()));
        let sink = seen.clone();
        let mut sim = pair(7, 2);
        sim.set_tap(Box::new(move |_, _, _, class, _| sink.borrow_mut().push(class)));
        sim.run_until(100_000).unwrap();
        assert!(!seen.borrow().is_empty());
        assert!(seen.borrow().iter().all(|c| *c == LinkClass::Inter));
    }
}
