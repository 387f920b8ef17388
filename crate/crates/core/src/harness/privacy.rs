use std::collections::HashSet;

use crate::codec::Encode;
use crate::crypto::Digest;
use crate::ledger::{IntraTx, LedgerTx};
use crate::protocol::{Event, Msg};
use crate::sim::{LinkClass, Millis, NodeId};

/// Window length of the leak check.
pub const WINDOW: usize = 8;

/// A cross-domain message that carried eight consecutive bytes of some
/// domain payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Leak {
    pub at: Millis,
    pub from: NodeId,
    pub to: NodeId,
    pub msg: &'static str,
    pub offset: u64,
}

/// Learns domain data payloads from intra-class traffic and checks every
/// inter-class message against them. Blocks and transactions are scanned
/// once per digest; everything else on every send.
#[derive(Default)]
pub struct PrivacyScanner {
    windows: HashSet<[u8; WINDOW]>,
    learned: HashSet<Digest>,
    scanned: HashSet<Digest>,
    messages: u64,
    bytes: u64,
    leaks: Vec<Leak>,
}

impl PrivacyScanner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Token transfers carry only public identifiers (address, amount,
    /// session memo), so only data payloads are learned.
    fn learn(&mut self, tx: &IntraTx) {
        if tx.transfer().is_some() || !self.learned.insert(tx.digest()) {
            return;
        }
        for w in tx.payload.windows(WINDOW) {
            self.windows.insert(w.try_into().expect("window length"));
        }
    }

    fn learn_all<'a>(&mut self, txs: impl IntoIterator<Item = &'a IntraTx>) {
        for tx in txs {
            self.learn(tx);
        }
    }

    pub fn observe(&mut self, at: Millis, from: NodeId, to: NodeId, class: LinkClass, msg: &Msg) {
        match class {
            LinkClass::Intra => match msg {
                Msg::IntraSubmit(txs) => self.learn_all(txs.iter()),
                Msg::IntraCommitted(c) | Msg::SyncBlock(c) => self.learn_all(c.txs.iter()),
                Msg::Consensus(m) => {
                    if let Some(p) = &m.proposal {
                        self.learn_all(p.txs.iter());
                    }
                }
                _ => {}
            },
            LinkClass::Inter => {
                // Domain data can only leak if it was learned first; a message
                // that carries domain transactions is itself learned and scanned.
                match msg {
                    Msg::IntraSubmit(txs) => self.learn_all(txs.iter()),
                    Msg::IntraCommitted(c) | Msg::SyncBlock(c) => self.learn_all(c.txs.iter()),
                    _ => {}
                }
                let key = match msg {
                    Msg::InterBlock { block, .. } => Some(block.digest()),
                    Msg::InterTx(tx) => Some(tx.digest()),
                    _ => None,
                };
                if let Some(k) = key {
                    if !self.scanned.insert(k) {
                        return;
                    }
                }
                self.scan(at, from, to, msg);
            }
        }
    }

    fn scan(&mut self, at: Millis, from: NodeId, to: NodeId, msg: &Msg) {
        let bytes = msg.to_bytes();
        self.messages += 1;
        self.bytes += bytes.len() as u64;
        if self.windows.is_empty() {
            return;
        }
        if let Some(i) = bytes
            .windows(WINDOW)
            .position(|w| self.windows.contains(<&[u8; WINDOW]>::try_from(w).expect("window")))
        {
            self.leaks.push(Leak {
                at,
                from,
                to,
                msg: msg.kind(),
                offset: i as u64,
            });
        }
    }

    pub fn leaks(&self) -> &[Leak] {
        &self.leaks
    }

    /// Log records: one per leak plus the closing summary.
    pub fn records(&self) -> Vec<(Millis, Event)> {
        let mut out: Vec<_> = self
            .leaks
            .iter()
            .map(|l| {
                (
                    l.at,
                    Event::PrivacyViolation {
                        from: l.from,
                        to: l.to,
                        msg: l.msg.to_string(),
                        offset: l.offset,
                    },
                )
            })
            .collect();
        out.push((
            out.last().map_or(0, |r| r.0),
            Event::PrivacyAudit {
                messages: self.messages,
                bytes: self.bytes,
                payloads: self.learned.len() as u64,
                violations: self.leaks.len() as u64,
            },
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::crypto::Keypair;

    fn tx(payload: Vec<u8>) -> IntraTx {
        IntraTx::new(&Keypair::from_seed(b"p"), 1, payload, 0).unwrap()
    }

    #[test]
    fn flags_payload_bytes_on_inter_links() {
        let mut s = PrivacyScanner::new();
        let secret: Vec<u8> = (0u8..64).map(|i| i.wrapping_mul(37) ^ 0x5a).collect();
        let t = tx(secret);
        s.observe(0, 1, 2, LinkClass::Intra, &Msg::IntraSubmit(Arc::new(vec![t.clone()])));
        assert!(s.leaks().is_empty());
        s.observe(5, 1, 9, LinkClass::Inter, &Msg::IntraSubmit(Arc::new(vec![t])));
        assert_eq!(s.leaks().len(), 1);
        assert_eq!(s.leaks()[0].msg, "intra_submit");
    }

    #[test]
    fn digests_alone_do_not_leak() {
        let mut s = PrivacyScanner::new();
        let t = tx(vec![7; 256]);
        s.observe(0, 1, 2, LinkClass::Intra, &Msg::IntraSubmit(Arc::new(vec![t.clone()])));
        s.observe(1, 1, 9, LinkClass::Inter, &Msg::GetBlock(t.digest()));
        assert!(s.leaks().is_empty());
        let recs = s.records();
        assert!(matches!(
            recs.last().unwrap().1,
            Event::PrivacyAudit { messages: 1, violations: 0, .. }
        ));
    }
}
