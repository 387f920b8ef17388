//! Offline checks of a run's event log against its report.
//!
//! Everything here is recomputed from the log alone: conflicting domain
//! commits, a replay of every token movement, payout rules of the exchange
//! contract and the privacy scan summary.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::eventlog::{log_digest, parse_log, LogError, LogLine};
use super::metrics::MetricsReport;
use crate::amount::Amount;
use crate::contract::Effect;
use crate::crypto::{Address, Digest};
use crate::ledger::ZoneId;
use crate::protocol::{Event, TransferRecord};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum Failure {
    #[error("log digest {actual} does not match the report's {expected}")]
    TamperedLog { expected: Digest, actual: Digest },
    #[error("log has {actual} records, report says {expected}")]
    RecordCount { expected: u64, actual: u64 },
    #[error("log does not start with a genesis record")]
    NoGenesis,
    #[error("zone {zone} committed two blocks at height {height}")]
    Safety { zone: ZoneId, height: u64 },
    #[error("{ledger}: {detail}")]
    Conservation { ledger: String, detail: String },
    #[error("contract {contract_id}: {detail}")]
    PaymentSafety { contract_id: u64, detail: String },
    #[error("session {session}: seller paid {count} times")]
    DoublePayout { session: Digest, count: u64 },
    #[error("{0} privacy violations logged")]
    Privacy(u64),
    #[error("report flags {field} = {value}")]
    ReportViolation { field: &'static str, value: i64 },
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Log(#[from] LogError),
}

/// Checks `log` against `report`. An empty result means the run is clean.
pub fn verify(report: &MetricsReport, log: &[u8]) -> Result<Vec<Failure>, VerifyError> {
    let mut out = Vec::new();
    let actual = log_digest(log);
    if actual != report.event_log_digest {
        out.push(Failure::TamperedLog {
            expected: report.event_log_digest,
            actual,
        });
    }
    let lines = parse_log(log)?;
    if lines.len() as u64 != report.events {
        out.push(Failure::RecordCount {
            expected: report.events,
            actual: lines.len() as u64,
        });
    }
    out.extend(check_lines(&lines));
    for (field, value) in [
        ("safety_violations", report.safety_violations as i64),
        ("double_payouts", report.double_payouts as i64),
        ("conservation_delta", report.conservation_delta),
        ("privacy_violations", report.privacy_violations as i64),
    ] {
        if value != 0 {
            out.push(Failure::ReportViolation { field, value });
        }
    }
    Ok(out)
}

/// Checks that need only the log.
pub fn check_lines(lines: &[LogLine]) -> Vec<Failure> {
    let mut out = Vec::new();
    let Some(Event::Genesis {
        inter_balances,
        domain_balances,
        ..
    }) = lines.first().map(|l| &l.event)
    else {
        out.push(Failure::NoGenesis);
        return out;
    };

    // Domain ledgers: first report per height wins, later ones must agree.
    let mut domains: BTreeMap<ZoneId, Replay> = domain_balances
        .iter()
        .map(|(z, b)| (*z, Replay::new(b)))
        .collect();
    let mut committed: HashMap<(ZoneId, u64), Digest> = HashMap::new();
    let mut ordered: BTreeMap<(ZoneId, u64), &[TransferRecord]> = BTreeMap::new();
    let mut confirmed: BTreeMap<u64, &Event> = BTreeMap::new();
    let mut paid: HashMap<Digest, u64> = HashMap::new();
    let mut privacy = 0;
    for l in lines {
        match &l.event {
            Event::IntraCommitted {
                zone,
                height,
                block,
                transfers,
                ..
            } => match committed.get(&(*zone, *height)) {
                None => {
                    committed.insert((*zone, *height), *block);
                    ordered.insert((*zone, *height), transfers);
                }
                Some(d) if d != block => out.push(Failure::Safety {
                    zone: *zone,
                    height: *height,
                }),
                Some(_) => {}
            },
            Event::InterConfirmed { height, .. } => {
                confirmed.insert(*height, &l.event);
            }
            Event::InterReverted { height, .. } => {
                confirmed.remove(height);
            }
            Event::SellerPaid { session, .. } => *paid.entry(*session).or_default() += 1,
            Event::PrivacyViolation { .. } => privacy += 1,
            _ => {}
        }
    }
    out.sort_by_key(|f| format!("{f}"));
    out.dedup();

    for ((zone, height), transfers) in ordered {
        let Some(r) = domains.get_mut(&zone) else {
            continue;
        };
        for t in transfers {
            r.credit(t.to, t.amount);
            r.debit(t.from, t.amount);
        }
        if let Some(detail) = r.check(Amount::ZERO) {
            out.push(Failure::Conservation {
                ledger: format!("zone {zone} height {height}"),
                detail,
            });
        }
    }

    // Inter ledger: replay the blocks still confirmed at the end.
    let mut inter = Replay::new(inter_balances);
    let mut minted = Amount::ZERO;
    let mut contracts: HashMap<u64, ContractTrack> = HashMap::new();
    for (height, e) in confirmed {
        let Event::InterConfirmed {
            miner,
            fee_payers,
            reward,
            calls,
            transfers,
            ..
        } = e
        else {
            unreachable!()
        };
        for (payer, fee) in fee_payers {
            inter.debit(*payer, *fee);
            inter.credit(*miner, *fee);
        }
        inter.credit(*miner, *reward);
        minted += *reward;
        for t in transfers {
            inter.credit(t.to, t.amount);
            inter.debit(t.from, t.amount);
        }
        for c in calls.iter().filter(|c| c.ok) {
            let track = contracts.entry(c.contract_id).or_default();
            match c.method.as_str() {
                "configure_publisher" | "configure_subscriber" => {}
                "commit_service" => track.commits += 1,
                _ => {}
            }
            match c.effect {
                Some(Effect::Deposit(a)) => {
                    inter.debit(c.sender, a);
                    inter.escrow += a.0 as i128;
                    track.deposited += a.0;
                }
                Some(Effect::Payout { to, amount }) => {
                    inter.credit(to, amount);
                    inter.escrow -= amount.0 as i128;
                    track.payouts += 1;
                    track.paid += amount.0;
                    if track.commits < 2 {
                        out.push(Failure::PaymentSafety {
                            contract_id: c.contract_id,
                            detail: format!("payout at height {height} before both sides committed"),
                        });
                    }
                    if track.payouts > 1 {
                        out.push(Failure::PaymentSafety {
                            contract_id: c.contract_id,
                            detail: format!("second payout at height {height}"),
                        });
                    }
                    if track.paid > track.deposited {
                        out.push(Failure::PaymentSafety {
                            contract_id: c.contract_id,
                            detail: format!("paid {} of {} deposited", track.paid, track.deposited),
                        });
                    }
                }
                Some(Effect::None) | None => {}
            }
        }
        if let Some(detail) = inter.check(minted) {
            out.push(Failure::Conservation {
                ledger: format!("inter height {height}"),
                detail,
            });
        }
    }

    let mut doubles: Vec<_> = paid.into_iter().filter(|(_, n)| *n > 1).collect();
    doubles.sort();
    for (session, count) in doubles {
        out.push(Failure::DoublePayout { session, count });
    }
    if privacy > 0 {
        out.push(Failure::Privacy(privacy));
    }
    out
}

#[derive(Default)]
struct ContractTrack {
    commits: u32,
    payouts: u32,
    deposited: u64,
    paid: u64,
}

/// Signed balance replay. Credits within a block are applied before debits
/// are checked, since the log aggregates transfers per block.
struct Replay {
    balances: BTreeMap<Address, i128>,
    escrow: i128,
    supply: i128,
}

impl Replay {
    fn new(genesis: &[(Address, Amount)]) -> Self {
        let balances: BTreeMap<_, _> = genesis.iter().map(|(a, v)| (*a, v.0 as i128)).collect();
        let supply = balances.values().sum();
        Self {
            balances,
            escrow: 0,
            supply,
        }
    }

    fn credit(&mut self, a: Address, v: Amount) {
        *self.balances.entry(a).or_default() += v.0 as i128;
    }

    fn debit(&mut self, a: Address, v: Amount) {
        *self.balances.entry(a).or_default() -= v.0 as i128;
    }

    fn check(&self, minted: Amount) -> Option<String> {
        if let Some((a, b)) = self.balances.iter().find(|(_, b)| **b < 0) {
            return Some(format!("balance of {a} went negative ({b})"));
        }
        if self.escrow < 0 {
            return Some(format!("escrow went negative ({})", self.escrow));
        }
        let total: i128 = self.balances.values().sum::<i128>() + self.escrow;
        let expected = self.supply + minted.0 as i128;
        (total != expected).then(|| format!("holdings {total} differ from supply {expected}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    fn line(at: u64, event: Event) -> LogLine {
        LogLine { at, node: 0, event }
    }

    fn genesis(a: Address) -> Event {
        Event::Genesis {
            inter_balances: vec![(a, Amount(100))],
            domain_balances: vec![(1, vec![(a, Amount(50))])],
            contracts: vec![1],
        }
    }

    #[test]
    fn detects_conflicting_commits() {
        let a = Address::ZERO;
        let commit = |b: &[u8]| Event::IntraCommitted {
            zone: 1,
            height: 1,
            block: hash(b),
            round: 0,
            txs: 0,
            transfers: vec![],
        };
        let lines = vec![line(0, genesis(a)), line(1, commit(b"x")), line(2, commit(b"x")), line(3, commit(b"y"))];
        assert_eq!(check_lines(&lines), vec![Failure::Safety { zone: 1, height: 1 }]);
    }

    #[test]
    fn detects_overdraft() {
        let a = Address::ZERO;
        let b = crate::crypto::Keypair::from_seed(b"b").address();
        let lines = vec![
            line(0, genesis(a)),
            line(1, Event::IntraCommitted {
                zone: 1,
                height: 1,
                block: hash(b"x"),
                round: 0,
                txs: 1,
                transfers: vec![TransferRecord { from: a, to: b, amount: Amount(60) }],
            }),
        ];
        assert!(matches!(check_lines(&lines)[..], [Failure::Conservation { .. }]));
    }

    #[test]
    fn reverted_blocks_are_not_replayed() {
        let a = Address::ZERO;
        let m = crate::crypto::Keypair::from_seed(b"m").address();
        let confirmed = Event::InterConfirmed {
            height: 1,
            block: hash(b"x"),
            miner: m,
            fee_payers: vec![(a, Amount(500))],
            reward: Amount::ZERO,
            calls: vec![],
            transfers: vec![],
        };
        let lines = vec![
            line(0, genesis(a)),
            line(1, confirmed),
            line(2, Event::InterReverted { height: 1, block: hash(b"x") }),
        ];
        assert!(check_lines(&lines).is_empty());
    }

    #[test]
    fn missing_genesis() {
        assert_eq!(check_lines(&[]), vec![Failure::NoGenesis]);
    }
}
