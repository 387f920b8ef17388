use std::sync::Arc;

use crate::amount::Amount;
use crate::codec::{Decoder, DecodeError, Encode, Encoder};
use crate::contract::ContractCall;
use crate::crypto::{hash, Address, Digest, Keypair, Signature, Verifier};
use crate::ledger::{Checkpoint, LedgerTx};

/// Contract id of the native token ledger; only `Transfer` is valid there.
pub const NATIVE_CONTRACT: u64 = 0;

/// Public inter-ledger transaction. Only checkpoints (digests) ever appear
/// here, never raw domain payloads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterTx {
    pub sender: Address,
    pub contract_id: u64,
    pub call: ContractCall,
    pub attached_value: Amount,
    pub fee: Amount,
    pub checkpoint: Option<Checkpoint>,
    /// Distinguishes otherwise identical calls from the same sender.
    pub nonce: u64,
    pub signature: Signature,
    digest: Digest,
}

/// Shared handle; blocks and pools pass transactions around by reference.
pub type InterTxRef = Arc<InterTx>;

impl InterTx {
    pub fn new(
        key: &Keypair,
        contract_id: u64,
        call: ContractCall,
        attached_value: Amount,
        checkpoint: Option<Checkpoint>,
        nonce: u64,
    ) -> Self {
        Self::with_fee(key, contract_id, call, attached_value, checkpoint, nonce, Amount::INTER_FEE)
    }

    pub fn with_fee(
        key: &Keypair,
        contract_id: u64,
        call: ContractCall,
        attached_value: Amount,
        checkpoint: Option<Checkpoint>,
        nonce: u64,
        fee: Amount,
    ) -> Self {
        let sender = key.address();
        let signature = key.sign(&Self::signing_bytes(
            &sender,
            contract_id,
            &call,
            attached_value,
            fee,
            checkpoint.as_ref(),
            nonce,
        ));
        Self::from_parts(
            sender,
            contract_id,
            call,
            attached_value,
            fee,
            checkpoint,
            nonce,
            signature,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        sender: Address,
        contract_id: u64,
        call: ContractCall,
        attached_value: Amount,
        fee: Amount,
        checkpoint: Option<Checkpoint>,
        nonce: u64,
        signature: Signature,
    ) -> Self {
        let mut tx = Self {
            sender,
            contract_id,
            call,
            attached_value,
            fee,
            checkpoint,
            nonce,
            signature,
            digest: Digest::ZERO,
        };
        tx.digest = hash(&tx.to_bytes());
        tx
    }

    fn signing_bytes(
        sender: &Address,
        contract_id: u64,
        call: &ContractCall,
        value: Amount,
        fee: Amount,
        checkpoint: Option<&Checkpoint>,
        nonce: u64,
    ) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(160);
        enc.put(sender)
            .u64(contract_id)
            .put(call)
            .put(&value)
            .put(&fee)
            .option(checkpoint)
            .u64(nonce);
        enc.finish()
    }

    pub fn verify(&self, verifier: &impl Verifier) -> bool {
        verifier.verify(
            &self.sender,
            &Self::signing_bytes(
                &self.sender,
                self.contract_id,
                &self.call,
                self.attached_value,
                self.fee,
                self.checkpoint.as_ref(),
                self.nonce,
            ),
            &self.signature,
        )
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let sender = Address::decode(dec)?;
        let contract_id = dec.u64()?;
        let call = ContractCall::decode(dec)?;
        let value = Amount(dec.u64()?);
        let fee = Amount(dec.u64()?);
        let checkpoint = dec.option(Checkpoint::decode)?;
        let nonce = dec.u64()?;
        let signature = Signature::decode(dec)?;
        Ok(Self::from_parts(
            sender,
            contract_id,
            call,
            value,
            fee,
            checkpoint,
            nonce,
            signature,
        ))
    }

    /// Total the sender must hold for the transaction to be admitted.
    pub fn cost(&self) -> Option<Amount> {
        self.attached_value.checked_add(self.fee)
    }
}

impl Encode for InterTx {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.sender)
            .u64(self.contract_id)
            .put(&self.call)
            .put(&self.attached_value)
            .put(&self.fee)
            .option(self.checkpoint.as_ref())
            .u64(self.nonce)
            .put(&self.signature);
    }
}

impl LedgerTx for InterTx {
    fn digest(&self) -> Digest {
        self.digest
    }
}

impl Encode for InterTxRef {
    fn encode(&self, enc: &mut Encoder) {
        self.as_ref().encode(enc);
    }
}

impl LedgerTx for InterTxRef {
    fn digest(&self) -> Digest {
        self.digest
    }
}
