//! Private-fork double-spend experiment.
//!
//! The attacker pays a merchant on the public chain and at the same time
//! mines a private branch from the payment's parent that spends the same
//! funds elsewhere. The merchant waits until the payment is `z` blocks deep.
//! Block arrivals form one Poisson process, so each next block is the
//! attacker's with probability `q` (its hash-power share). The attacker
//! publishes as soon as its branch is strictly longer than the public one,
//! and gives up once it trails by `give_up` blocks.

use std::sync::Arc;

use rand::Rng;

use super::miner::{Adoption, InterConfig, MinerState};
use super::state::WorldState;
use super::tx::{InterTx, NATIVE_CONTRACT};
use crate::amount::Amount;
use crate::contract::ContractCall;
use crate::crypto::{Keypair, Keyring};
use crate::ledger::LedgerTx;

/// Probability that an attacker with share `q` ever overtakes an honest
/// chain that is `z` blocks ahead of the fork, counting the blocks the
/// attacker mined while the merchant waited (negative binomial) and
/// requiring a strictly longer branch.
pub fn analytic_success(q: f64, z: u32) -> f64 {
    let p = 1.0 - q;
    if q >= p {
        return 1.0;
    }
    let ratio = q / p;
    let mut total = 0.0;
    let mut coeff = 1.0;
    // m = attacker blocks found by the time the honest chain has z.
    for m in 0..10_000u32 {
        if m > 0 {
            coeff *= (m + z - 1) as f64 / m as f64;
        }
        let pm = coeff * p.powi(z as i32) * q.powi(m as i32);
        let deficit = z as i64 - m as i64 + 1;
        let catch_up = if deficit <= 0 { 1.0 } else { ratio.powi(deficit as i32) };
        total += pm * catch_up;
        if m > z && pm < 1e-15 {
            break;
        }
    }
    total.min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttackOutcome {
    /// Merchant's node dropped the payment after adopting the private branch.
    pub reverted: bool,
    pub honest_blocks: u64,
    pub attacker_blocks: u64,
}

/// Runs one attempt against real miner state machines.
pub fn private_fork_attempt(q: f64, z: u64, give_up: u64, rng: &mut impl Rng) -> AttackOutcome {
    let attacker = Keypair::from_seed(b"attacker");
    let merchant = Keypair::from_seed(b"merchant");
    let accomplice = Keypair::from_seed(b"accomplice");
    let honest_id = Keypair::from_seed(b"honest-miner").address();
    let mut ring = Keyring::new();
    for k in [&attacker, &merchant, &accomplice] {
        ring.register(k);
    }
    let ring = Arc::new(ring);
    let funds = Amount::from_tokens(10.0);
    let genesis = WorldState::new([(attacker.address(), funds)], []);
    let cfg = InterConfig {
        confirmation_depth: z,
        ..InterConfig::default()
    };
    let mut honest = MinerState::new(honest_id, cfg.clone(), ring.clone(), genesis.clone());
    let mut private = MinerState::new(attacker.address(), cfg, ring, genesis);

    let spend = funds - Amount::INTER_FEE;
    let payment = InterTx::new(
        &attacker,
        NATIVE_CONTRACT,
        ContractCall::Transfer { to: merchant.address() },
        spend,
        None,
        0,
    );
    let double = InterTx::new(
        &attacker,
        NATIVE_CONTRACT,
        ContractCall::Transfer { to: accomplice.address() },
        spend,
        None,
        1,
    );
    let pay_digest = payment.digest();
    honest.submit_inter_tx(payment).expect("funded");
    private.submit_inter_tx(double).expect("funded");

    // The payment's block is the first honest block after the fork point.
    let mut now = 0;
    let mut published = Vec::new();
    loop {
        now += 1;
        let (h, a) = (honest.tip_height(), private.tip_height());
        if h >= z && a > h {
            break;
        }
        if h >= z && h >= a + give_up {
            break;
        }
        if rng.gen_bool(q) {
            published.push(private.mine_virtual(now));
        } else {
            honest.mine_virtual(now);
        }
    }
    let attacker_blocks = private.tip_height();
    let honest_blocks = honest.tip_height();
    if attacker_blocks > honest_blocks {
        for (b, txs) in published {
            let r = honest.on_block(b, txs);
            debug_assert!(r.is_ok() && r != Ok(Adoption::Duplicate));
        }
    }
    AttackOutcome {
        reverted: honest.locate(&pay_digest).is_none(),
        honest_blocks,
        attacker_blocks,
    }
}

/// Success rate over `attempts` independent attempts.
pub fn double_spend_rate(q: f64, z: u64, attempts: usize, rng: &mut impl Rng) -> f64 {
    let wins = (0..attempts)
        .filter(|_| private_fork_attempt(q, z, 60, rng).reverted)
        .count();
    wins as f64 / attempts as f64
}
