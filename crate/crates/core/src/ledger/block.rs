use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::codec::{Encode, Encoder};
use crate::crypto::{hash, Address, Digest, Signature, Verifier};

/// 256-bit proof-of-work threshold, big-endian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target(pub [u8; 32]);

impl Target {
    pub const MAX: Target = Target([0xff; 32]);

    /// Threshold at which one header hash in `expected` is expected to win:
    /// `floor((2^256 - 1) / expected)`.
    pub fn from_expected_hashes(expected: u64) -> Target {
        let divisor = expected.max(1) as u128;
        let mut out = [0u8; 32];
        let mut rem: u128 = 0;
        for (i, byte) in [0xffu8; 32].iter().enumerate() {
            let cur = (rem << 8) | *byte as u128;
            out[i] = (cur / divisor) as u8;
            rem = cur % divisor;
        }
        Target(out)
    }
}

impl Encode for Target {
    fn encode(&self, enc: &mut Encoder) {
        enc.raw(&self.0);
    }
}

/// A validator signature inside a quorum certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumVote {
    pub validator: Address,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Seal {
    Bft {
        proposer: Address,
        /// Round in which the quorum certificate was formed.
        round: u32,
        quorum: Vec<QuorumVote>,
    },
    Pow {
        miner: Address,
        nonce: u64,
        target: Target,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub parent: Digest,
    pub height: u64,
    pub tx_root: Digest,
    /// Virtual-clock milliseconds.
    pub timestamp: u64,
    pub seal: Seal,
}

/// Root over ordered transaction digests; all-zero for an empty block.
pub fn tx_root(digests: impl IntoIterator<Item = Digest>) -> Digest {
    let mut enc = Encoder::new();
    let mut any = false;
    for d in digests {
        enc.put(&d);
        any = true;
    }
    if any {
        hash(&enc.finish())
    } else {
        Digest::ZERO
    }
}

/// Bytes a validator signs for a precommit on `block_digest` in `round`.
///
/// `block_digest` binds parent, height and tx root, so a precommit covers
/// (parent, height, tx_root, round).
pub fn precommit_bytes(height: u64, round: u32, block_digest: &Digest) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("PRECOMMIT").u64(height).u32(round).u8(1).put(block_digest);
    enc.finish()
}

impl Block {
    pub fn genesis_bft() -> Block {
        Block {
            parent: Digest::ZERO,
            height: 0,
            tx_root: Digest::ZERO,
            timestamp: 0,
            seal: Seal::Bft {
                proposer: Address::ZERO,
                round: 0,
                quorum: Vec::new(),
            },
        }
    }

    pub fn genesis_pow() -> Block {
        Block {
            parent: Digest::ZERO,
            height: 0,
            tx_root: Digest::ZERO,
            timestamp: 0,
            seal: Seal::Pow {
                miner: Address::ZERO,
                nonce: 0,
                target: Target::MAX,
            },
        }
    }

    /// Header bytes: every field except the commit-time quorum certificate.
    pub fn header_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(160);
        enc.put(&self.parent)
            .u64(self.height)
            .put(&self.tx_root)
            .u64(self.timestamp);
        match &self.seal {
            Seal::Bft { proposer, .. } => {
                enc.u8(0).put(proposer);
            }
            Seal::Pow {
                miner,
                nonce,
                target,
            } => {
                enc.u8(1).put(miner).u64(*nonce).put(target);
            }
        }
        enc.finish()
    }

    pub fn digest(&self) -> Digest {
        hash(&self.header_bytes())
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0 && self.parent.is_zero()
    }

    pub fn pow_valid(&self) -> bool {
        match &self.seal {
            Seal::Pow { target, .. } => self.digest().below(&target.0),
            Seal::Bft { .. } => false,
        }
    }

    /// At least `2f+1` distinct committee members signed a precommit for
    /// this block in the seal's round.
    pub fn quorum_valid(&self, committee: &[Address], f: usize, verifier: &impl Verifier) -> bool {
        let Seal::Bft { round, quorum, .. } = &self.seal else {
            return false;
        };
        let msg = precommit_bytes(self.height, *round, &self.digest());
        let mut signers = HashSet::new();
        for vote in quorum {
            if committee.contains(&vote.validator)
                && verifier.verify(&vote.validator, &msg, &vote.signature)
            {
                signers.insert(vote.validator);
            }
        }
        signers.len() >= 2 * f + 1
    }
}

impl Encode for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.raw(&self.header_bytes());
        if let Seal::Bft { round, quorum, .. } = &self.seal {
            enc.u32(*round).u32(quorum.len() as u32);
            for v in quorum {
                enc.put(&v.validator).put(&v.signature);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{Keypair, Keyring};

    #[test]
    fn max_target_accepts_first_nonce() {
        let mut b = Block::genesis_pow();
        b.height = 1;
        assert!(b.pow_valid());
    }

    #[test]
    fn target_from_expected_hashes() {
        assert_eq!(Target::from_expected_hashes(1), Target::MAX);
        let t = Target::from_expected_hashes(256);
        assert_eq!(t.0[0], 0);
        assert_eq!(t.0[1], 0xff);
        let t = Target::from_expected_hashes(2);
        assert_eq!(t.0[0], 0x7f);
        assert!(t.0[1..].iter().all(|&b| b == 0xff));
    }

    #[test]
    fn empty_tx_root_is_zero() {
        assert_eq!(tx_root(std::iter::empty()), Digest::ZERO);
        assert_ne!(tx_root([hash(b"a")]), Digest::ZERO);
    }

    #[test]
    fn quorum_needs_two_f_plus_one_distinct_signers() {
        let keys: Vec<_> = (0..4u8).map(|i| Keypair::from_seed(&[i])).collect();
        let committee: Vec<_> = keys.iter().map(|k| k.address()).collect();
        let mut ring = Keyring::new();
        keys.iter().for_each(|k| ring.register(k));
        let mut block = Block::genesis_bft();
        block.height = 1;
        block.seal = Seal::Bft {
            proposer: committee[1],
            round: 0,
            quorum: vec![],
        };
        let msg = precommit_bytes(1, 0, &block.digest());
        let vote = |k: &Keypair| QuorumVote {
            validator: k.address(),
            signature: k.sign(&msg),
        };
        block.seal = Seal::Bft {
            proposer: committee[1],
            round: 0,
            quorum: vec![vote(&keys[0]), vote(&keys[1]), vote(&keys[1])],
        };
        assert!(!block.quorum_valid(&committee, 1, &ring));
        if let Seal::Bft { quorum, .. } = &mut block.seal {
            quorum.push(vote(&keys[2]));
        }
        assert!(block.quorum_valid(&committee, 1, &ring));
    }

    #[test]
    fn digest_ignores_quorum_certificate() {
        let mut a = Block::genesis_bft();
        a.height = 3;
        let mut b = a.clone();
        if let Seal::Bft { round, .. } = &mut b.seal {
            *round = 9;
        }
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.to_bytes(), b.to_bytes());
    }
}
