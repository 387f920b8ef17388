use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::Amount;
use crate::codec::{Decoder, DecodeError, Encode, Encoder};
use crate::crypto::{hash, Address, Digest, Keypair, Signature, Verifier};

/// Largest payload a domain transaction may carry (1 KB).
pub const MAX_PAYLOAD: usize = 1024;

pub type ZoneId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TxError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    PayloadTooLarge(usize),
}

/// Anything that can be stored in a [`Ledger`](super::Ledger).
pub trait LedgerTx: Encode + Clone {
    fn digest(&self) -> Digest;
}

/// Raw domain transaction. The payload never leaves the domain; only its
/// digest (`tx_ref`) is published.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntraTx {
    pub sender: Address,
    pub zone_id: ZoneId,
    pub payload: Vec<u8>,
    pub nonce: u64,
    pub signature: Signature,
    digest: Digest,
}

impl IntraTx {
    pub fn new(
        key: &Keypair,
        zone_id: ZoneId,
        payload: Vec<u8>,
        nonce: u64,
    ) -> Result<Self, TxError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(TxError::PayloadTooLarge(payload.len()));
        }
        let sender = key.address();
        let signature = key.sign(&Self::signing_bytes(&sender, zone_id, &payload, nonce));
        Ok(Self::from_parts(sender, zone_id, payload, nonce, signature))
    }

    /// Reassembles a transaction without checking the signature.
    pub fn from_parts(
        sender: Address,
        zone_id: ZoneId,
        payload: Vec<u8>,
        nonce: u64,
        signature: Signature,
    ) -> Self {
        let mut tx = Self {
            sender,
            zone_id,
            payload,
            nonce,
            signature,
            digest: Digest::ZERO,
        };
        tx.digest = hash(&tx.to_bytes());
        tx
    }

    fn signing_bytes(sender: &Address, zone_id: ZoneId, payload: &[u8], nonce: u64) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(payload.len() + 40);
        enc.put(sender).u32(zone_id).bytes(payload).u64(nonce);
        enc.finish()
    }

    pub fn verify(&self, verifier: &impl Verifier) -> bool {
        self.payload.len() <= MAX_PAYLOAD
            && verifier.verify(
                &self.sender,
                &Self::signing_bytes(&self.sender, self.zone_id, &self.payload, self.nonce),
                &self.signature,
            )
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let sender = Address::decode(dec)?;
        let zone_id = dec.u32()?;
        let payload = dec.bytes()?;
        let nonce = dec.u64()?;
        let signature = Signature::decode(dec)?;
        Ok(Self::from_parts(sender, zone_id, payload, nonce, signature))
    }

    /// Interprets the payload as a domain token transfer, if it is one.
    pub fn transfer(&self) -> Option<Transfer> {
        Transfer::parse(&self.payload)
    }
}

impl Encode for IntraTx {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.sender)
            .u32(self.zone_id)
            .bytes(&self.payload)
            .u64(self.nonce)
            .put(&self.signature);
    }
}

impl LedgerTx for IntraTx {
    fn digest(&self) -> Digest {
        self.digest
    }
}

/// Token transfer carried in an [`IntraTx`] payload.
///
/// Wire form: `b"XFER"` ‖ recipient (20) ‖ amount (u64 BE) ‖ memo (32).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub to: Address,
    pub amount: Amount,
    pub memo: Digest,
}

impl Transfer {
    const TAG: &'static [u8; 4] = b"XFER";
    const LEN: usize = 4 + 20 + 8 + 32;

    pub fn to_payload(&self) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(Self::LEN);
        enc.raw(Self::TAG).put(&self.to).put(&self.amount).put(&self.memo);
        enc.finish()
    }

    pub fn parse(payload: &[u8]) -> Option<Transfer> {
        if payload.len() != Self::LEN || &payload[..4] != Self::TAG {
            return None;
        }
        let mut dec = Decoder::new(&payload[4..]);
        let to = Address::decode(&mut dec).ok()?;
        let amount = Amount(dec.u64().ok()?);
        let memo = Digest::decode(&mut dec).ok()?;
        Some(Transfer { to, amount, memo })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Keyring;

    #[test]
    fn oversized_payload_rejected() {
        let kp = Keypair::from_seed(b"s");
        assert_eq!(
            IntraTx::new(&kp, 1, vec![0; MAX_PAYLOAD + 1], 0),
            Err(TxError::PayloadTooLarge(MAX_PAYLOAD + 1))
        );
        assert!(IntraTx::new(&kp, 1, vec![0; MAX_PAYLOAD], 0).is_ok());
    }

    #[test]
    fn signature_covers_every_field() {
        let kp = Keypair::from_seed(b"s");
        let mut ring = Keyring::new();
        ring.register(&kp);
        let tx = IntraTx::new(&kp, 1, b"req".to_vec(), 7).unwrap();
        assert!(tx.verify(&ring));
        let forged = IntraTx::from_parts(tx.sender, 2, tx.payload.clone(), 7, tx.signature);
        assert!(!forged.verify(&ring));
        let forged = IntraTx::from_parts(tx.sender, 1, tx.payload.clone(), 8, tx.signature);
        assert!(!forged.verify(&ring));
    }

    #[test]
    fn digest_is_deterministic_and_decodes_back() {
        let kp = Keypair::from_seed(b"s");
        let a = IntraTx::new(&kp, 1, b"req".to_vec(), 7).unwrap();
        let b = IntraTx::new(&kp, 1, b"req".to_vec(), 7).unwrap();
        assert_eq!(a.digest(), b.digest());
        let bytes = a.to_bytes();
        let mut dec = Decoder::new(&bytes);
        let back = IntraTx::decode(&mut dec).unwrap();
        dec.finish().unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn transfer_payload_round_trip() {
        let t = Transfer {
            to: Keypair::from_seed(b"x").address(),
            amount: Amount(42),
            memo: hash(b"m"),
        };
        assert_eq!(Transfer::parse(&t.to_payload()), Some(t));
        assert_eq!(Transfer::parse(b"XFER"), None);
    }
}
