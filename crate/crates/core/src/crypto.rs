//! Digests, account addresses and signatures.
//!
//! Hashing is SHA-256 throughout. Signatures use a deterministic keyed-hash
//! scheme (HMAC-SHA256 under the account's secret) whose verification
//! material lives in a [`Keyring`], the simulation's stand-in for a
//! permissioned PKI. Protocol code only relies on the [`Verifier`] contract,
//! so any scheme with the same sign/verify behaviour can be swapped in.

use std::collections::HashMap;
use std::fmt;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::codec::{Decoder, DecodeError, Encode, Encoder};

type HmacSha256 = Hmac<Sha256>;

macro_rules! fixed_bytes {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;
            pub const ZERO: Self = Self([0u8; $len]);

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn is_zero(&self) -> bool {
                self.0 == [0u8; $len]
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s, &mut out)?;
                Ok(Self(out))
            }

            pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                dec.array().map(Self)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), &self.to_hex()[..8])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Encode for $name {
            fn encode(&self, enc: &mut Encoder) {
                enc.raw(&self.0);
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

fixed_bytes!(Digest, 32);
fixed_bytes!(Address, 20);
fixed_bytes!(Signature, 32);

/// SHA-256 of `data`.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

impl Digest {
    /// Big-endian integer comparison against a 256-bit threshold.
    pub fn below(&self, target: &[u8; 32]) -> bool {
        self.0 < *target
    }
}

#[derive(Clone)]
pub struct Keypair {
    secret: [u8; 32],
    public: [u8; 32],
    address: Address,
}

impl Keypair {
    /// Derives a key pair from arbitrary seed material.
    pub fn from_seed(seed: &[u8]) -> Self {
        let secret = hash_parts(&[b"fedsim/secret", seed]).0;
        let public = hash_parts(&[b"fedsim/public", &secret]).0;
        let pk_digest = hash(&public);
        let mut addr = [0u8; 20];
        addr.copy_from_slice(&pk_digest.0[12..]);
        Self {
            secret,
            public,
            address: Address(addr),
        }
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn public_key(&self) -> &[u8; 32] {
        &self.public
    }

    pub fn sign(&self, data: &[u8]) -> Signature {
        sign_with(&self.secret, data)
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair").field("address", &self.address).finish()
    }
}

fn sign_with(secret: &[u8; 32], data: &[u8]) -> Signature {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(data);
    Signature(mac.finalize().into_bytes().into())
}

pub trait Verifier {
    /// `false` for unknown addresses, altered data or foreign signatures.
    fn verify(&self, addr: &Address, data: &[u8], sig: &Signature) -> bool;
}

/// Registry of account verification material for one simulation run.
#[derive(Default, Clone)]
pub struct Keyring {
    keys: HashMap<Address, [u8; 32]>,
}

impl std::fmt::Debug for Keyring {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Keyring").field("accounts", &self.keys.len()).finish()
    }
}

impl Keyring {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, kp: &Keypair) {
        self.keys.insert(kp.address, kp.secret);
    }

    pub fn contains(&self, addr: &Address) -> bool {
        self.keys.contains_key(addr)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl Verifier for Keyring {
    fn verify(&self, addr: &Address, data: &[u8], sig: &Signature) -> bool {
        let Some(secret) = self.keys.get(addr) else {
            return false;
        };
        let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
        mac.update(data);
        mac.verify_slice(&sig.0).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_empty_vector() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn sha256_abc_vector() {
        assert_eq!(
            hash(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_parts_matches_concatenation() {
        assert_eq!(hash_parts(&[b"ab", b"c"]), hash(b"abc"));
    }

    fn ring() -> (Keyring, Keypair, Keypair) {
        let a = Keypair::from_seed(b"alice");
        let b = Keypair::from_seed(b"bob");
        let mut ring = Keyring::new();
        ring.register(&a);
        ring.register(&b);
        (ring, a, b)
    }

    #[test]
    fn sign_verify_round_trip() {
        let (ring, a, _) = ring();
        let sig = a.sign(b"payload");
        assert!(ring.verify(&a.address(), b"payload", &sig));
    }

    #[test]
    fn flipped_bit_fails() {
        let (ring, a, _) = ring();
        let sig = a.sign(b"payload");
        let mut data = b"payload".to_vec();
        data[3] ^= 0x01;
        assert!(!ring.verify(&a.address(), &data, &sig));
    }

    #[test]
    fn wrong_signer_fails() {
        let (ring, a, b) = ring();
        let sig = a.sign(b"payload");
        assert!(!ring.verify(&b.address(), b"payload", &sig));
    }

    #[test]
    fn unknown_address_fails_without_panicking() {
        let (ring, a, _) = ring();
        let stranger = Keypair::from_seed(b"mallory");
        let sig = stranger.sign(b"x");
        assert!(!ring.verify(&stranger.address(), b"x", &sig));
        assert!(!ring.verify(&Address::ZERO, b"x", &a.sign(b"x")));
    }

    #[test]
    fn addresses_are_distinct_per_seed() {
        let addrs: std::collections::HashSet<_> = (0..1000u32)
            .map(|i| Keypair::from_seed(&i.to_be_bytes()).address())
            .collect();
        assert_eq!(addrs.len(), 1000);
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = hash(b"abc");
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
    }
}
