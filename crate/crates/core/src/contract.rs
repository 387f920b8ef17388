//! Data-service-exchange contract.
//!
//! One [`BrokerInfo`] record per deployed contract. Status lifecycle:
//!
//! ```text
//! EMPTY --(both sides configured)--> CONFIGURED --(both commit)--> COMMITTED --(settle)--> PAID
//! ```
//!
//! Each side is configured by an authorized delegate (a miner on the
//! contract's delegation list). The subscriber side deposits the escrow.
//! Payment moves the whole escrow to the publisher and can happen once.
//! Every method either applies all of its effects or returns an error and
//! leaves the record untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::Amount;
use crate::codec::{Decoder, DecodeError, Encode, Encoder};
use crate::crypto::{Address, Digest};
use crate::ledger::{Checkpoint, ZoneId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BrokerStatus {
    Empty,
    Configured,
    Committed,
    Paid,
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContractError {
    #[error("caller is not authorized for this method")]
    Unauthorized,
    #[error("method not allowed in the current broker state")]
    InvalidState,
    #[error("deposit must be positive")]
    InsufficientEscrow,
    #[error("replacement is not the next delegate in the list")]
    InvalidDelegate,
    #[error("no such contract")]
    UnknownContract,
}

/// Which side of the exchange a delegate acts for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Publisher,
    Subscriber,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerInfo {
    pub contract_id: u64,
    /// `Address::ZERO` while unset.
    pub publisher_id: Address,
    pub subscriber_id: Address,
    pub pub_zid: ZoneId,
    pub sub_zid: ZoneId,
    pub pub_status: u8,
    pub sub_status: u8,
    pub broker_status: BrokerStatus,
    pub tx_refs: Vec<Checkpoint>,
    pub escrow: Amount,
    pub admin: Address,
    pub delegation_list: Vec<Address>,
    /// Requirements digest both sides must agree on; zero while unset.
    pub service_ref: Digest,
    pub pub_committed: bool,
    pub sub_committed: bool,
    pub deposited: Amount,
    pub paid_out: Amount,
}

/// Value movements the executing ledger must apply alongside a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Effect {
    None,
    /// Attached value moved from the caller into escrow.
    Deposit(Amount),
    /// Escrow released to the publisher's account.
    Payout { to: Address, amount: Amount },
}

impl BrokerInfo {
    pub fn new(contract_id: u64, admin: Address, delegation_list: Vec<Address>) -> Self {
        Self {
            contract_id,
            publisher_id: Address::ZERO,
            subscriber_id: Address::ZERO,
            pub_zid: 0,
            sub_zid: 0,
            pub_status: 0,
            sub_status: 0,
            broker_status: BrokerStatus::Empty,
            tx_refs: Vec::new(),
            escrow: Amount::ZERO,
            admin,
            delegation_list,
            service_ref: Digest::ZERO,
            pub_committed: false,
            sub_committed: false,
            deposited: Amount::ZERO,
            paid_out: Amount::ZERO,
        }
    }

    /// No side configured yet.
    pub fn is_free(&self) -> bool {
        self.broker_status == BrokerStatus::Empty && self.pub_status == 0 && self.sub_status == 0
    }

    /// Half-configured with the other side waiting on `service_ref`.
    pub fn awaits(&self, side: Side, service_ref: &Digest) -> bool {
        self.broker_status == BrokerStatus::Empty
            && self.service_ref == *service_ref
            && match side {
                Side::Publisher => self.pub_status == 0 && self.sub_status == 1,
                Side::Subscriber => self.sub_status == 0 && self.pub_status == 1,
            }
    }

    pub fn party(&self, side: Side) -> Address {
        match side {
            Side::Publisher => self.publisher_id,
            Side::Subscriber => self.subscriber_id,
        }
    }

    fn authorized(&self, caller: &Address) -> bool {
        self.delegation_list.contains(caller)
    }

    fn service_compatible(&self, service_ref: &Digest) -> bool {
        self.service_ref.is_zero() || self.service_ref == *service_ref
    }

    fn refresh_configured(&mut self) {
        if self.pub_status == 1 && self.sub_status == 1 && self.broker_status == BrokerStatus::Empty
        {
            self.broker_status = BrokerStatus::Configured;
        }
    }

    pub fn configure_publisher(
        &mut self,
        caller: Address,
        cp: Checkpoint,
        service_ref: Digest,
    ) -> Result<Effect, ContractError> {
        if !self.authorized(&caller) {
            return Err(ContractError::Unauthorized);
        }
        if !matches!(
            self.broker_status,
            BrokerStatus::Empty | BrokerStatus::Configured
        ) || self.pub_status == 1
            || !self.service_compatible(&service_ref)
        {
            return Err(ContractError::InvalidState);
        }
        self.publisher_id = caller;
        self.pub_zid = cp.zone_id;
        self.tx_refs.push(cp);
        self.service_ref = service_ref;
        self.pub_status = 1;
        self.refresh_configured();
        Ok(Effect::None)
    }

    pub fn configure_subscriber(
        &mut self,
        caller: Address,
        cp: Checkpoint,
        service_ref: Digest,
        deposit: Amount,
    ) -> Result<Effect, ContractError> {
        if !self.authorized(&caller) {
            return Err(ContractError::Unauthorized);
        }
        if deposit.is_zero() {
            return Err(ContractError::InsufficientEscrow);
        }
        if !matches!(
            self.broker_status,
            BrokerStatus::Empty | BrokerStatus::Configured
        ) || self.sub_status == 1
            || !self.service_compatible(&service_ref)
        {
            return Err(ContractError::InvalidState);
        }
        self.subscriber_id = caller;
        self.sub_zid = cp.zone_id;
        self.tx_refs.push(cp);
        self.service_ref = service_ref;
        self.escrow += deposit;
        self.deposited += deposit;
        self.sub_status = 1;
        self.refresh_configured();
        Ok(Effect::Deposit(deposit))
    }

    pub fn commit_service(&mut self, caller: Address) -> Result<Effect, ContractError> {
        let side = self.side_of(&caller).ok_or(ContractError::Unauthorized)?;
        if self.pub_status != 1
            || self.sub_status != 1
            || self.broker_status != BrokerStatus::Configured
        {
            return Err(ContractError::InvalidState);
        }
        match side {
            Side::Publisher => self.pub_committed = true,
            Side::Subscriber => self.sub_committed = true,
        }
        if self.pub_committed && self.sub_committed {
            self.broker_status = BrokerStatus::Committed;
        }
        Ok(Effect::None)
    }

    pub fn settle_payment(&mut self, caller: Address) -> Result<Effect, ContractError> {
        self.side_of(&caller).ok_or(ContractError::Unauthorized)?;
        if self.broker_status != BrokerStatus::Committed {
            return Err(ContractError::InvalidState);
        }
        let amount = self.escrow;
        self.escrow = Amount::ZERO;
        self.paid_out += amount;
        self.broker_status = BrokerStatus::Paid;
        Ok(Effect::Payout {
            to: self.publisher_id,
            amount,
        })
    }

    pub fn replace_delegate(
        &mut self,
        caller: Address,
        old: Address,
        new: Address,
    ) -> Result<Effect, ContractError> {
        if caller != self.admin {
            return Err(ContractError::Unauthorized);
        }
        let side = self.side_of(&old).ok_or(ContractError::InvalidDelegate)?;
        let pos = self
            .delegation_list
            .iter()
            .position(|d| *d == old)
            .ok_or(ContractError::InvalidDelegate)?;
        if self.delegation_list.get(pos + 1) != Some(&new) {
            return Err(ContractError::InvalidDelegate);
        }
        match side {
            Side::Publisher => self.publisher_id = new,
            Side::Subscriber => self.subscriber_id = new,
        }
        Ok(Effect::None)
    }

    pub fn side_of(&self, caller: &Address) -> Option<Side> {
        if caller.is_zero() {
            None
        } else if *caller == self.publisher_id {
            Some(Side::Publisher)
        } else if *caller == self.subscriber_id {
            Some(Side::Subscriber)
        } else {
            None
        }
    }

    /// Checks the record's structural invariants.
    pub fn invariants_hold(&self) -> bool {
        let committed_ok = !matches!(
            self.broker_status,
            BrokerStatus::Committed | BrokerStatus::Paid
        ) || (self.pub_status == 1 && self.sub_status == 1);
        let escrow_ok = self.escrow.is_zero() || self.sub_status == 1;
        let paid_ok = self.broker_status != BrokerStatus::Paid || self.escrow.is_zero();
        let conserved = self.deposited.checked_sub(self.paid_out) == Some(self.escrow);
        committed_ok && escrow_ok && paid_ok && conserved
    }

    /// Applies a decoded call. `value` is the transaction's attached value.
    pub fn dispatch(
        &mut self,
        caller: Address,
        call: &ContractCall,
        checkpoint: Option<&Checkpoint>,
        value: Amount,
    ) -> Result<Effect, ContractError> {
        match call {
            ContractCall::ConfigurePublisher { service_ref } => {
                let cp = checkpoint.ok_or(ContractError::InvalidState)?;
                self.configure_publisher(caller, *cp, *service_ref)
            }
            ContractCall::ConfigureSubscriber { service_ref } => {
                let cp = checkpoint.ok_or(ContractError::InvalidState)?;
                self.configure_subscriber(caller, *cp, *service_ref, value)
            }
            ContractCall::CommitService => self.commit_service(caller),
            ContractCall::SettlePayment => self.settle_payment(caller),
            ContractCall::ReplaceDelegate { old, new } => self.replace_delegate(caller, *old, *new),
            ContractCall::Transfer { .. } => Err(ContractError::InvalidState),
        }
    }
}

impl BrokerStatus {
    fn code(self) -> u8 {
        match self {
            BrokerStatus::Empty => 0,
            BrokerStatus::Configured => 1,
            BrokerStatus::Committed => 2,
            BrokerStatus::Paid => 3,
        }
    }
}

impl Encode for BrokerInfo {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.contract_id)
            .put(&self.publisher_id)
            .put(&self.subscriber_id)
            .u32(self.pub_zid)
            .u32(self.sub_zid)
            .u8(self.pub_status)
            .u8(self.sub_status)
            .u8(self.broker_status.code())
            .list(&self.tx_refs)
            .put(&self.escrow)
            .put(&self.admin)
            .list(&self.delegation_list)
            .put(&self.service_ref)
            .bool(self.pub_committed)
            .bool(self.sub_committed)
            .put(&self.deposited)
            .put(&self.paid_out);
    }
}

impl BrokerInfo {
    /// Hash of the canonical encoding; equal states give equal digests.
    pub fn digest(&self) -> Digest {
        crate::crypto::hash(&self.to_bytes())
    }
}

/// Method call carried by an inter-ledger transaction.
///
/// Encoded as the method name (length-prefixed UTF-8) followed by the
/// canonical encoding of its arguments.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContractCall {
    /// Native value transfer of the attached value (contract id 0).
    Transfer { to: Address },
    ConfigurePublisher { service_ref: Digest },
    /// The attached value is the escrow deposit.
    ConfigureSubscriber { service_ref: Digest },
    CommitService,
    SettlePayment,
    ReplaceDelegate { old: Address, new: Address },
}

impl ContractCall {
    pub fn method(&self) -> &'static str {
        match self {
            ContractCall::Transfer { .. } => "transfer",
            ContractCall::ConfigurePublisher { .. } => "configure_publisher",
            ContractCall::ConfigureSubscriber { .. } => "configure_subscriber",
            ContractCall::CommitService => "commit_service",
            ContractCall::SettlePayment => "settle_payment",
            ContractCall::ReplaceDelegate { .. } => "replace_delegate",
        }
    }

    /// Only the contract admin may issue these.
    pub fn admin_gated(&self) -> bool {
        matches!(self, ContractCall::ReplaceDelegate { .. })
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.offset();
        let name = dec.string()?;
        Ok(match name.as_str() {
            "transfer" => ContractCall::Transfer {
                to: Address::decode(dec)?,
            },
            "configure_publisher" => ContractCall::ConfigurePublisher {
                service_ref: Digest::decode(dec)?,
            },
            "configure_subscriber" => ContractCall::ConfigureSubscriber {
                service_ref: Digest::decode(dec)?,
            },
            "commit_service" => ContractCall::CommitService,
            "settle_payment" => ContractCall::SettlePayment,
            "replace_delegate" => ContractCall::ReplaceDelegate {
                old: Address::decode(dec)?,
                new: Address::decode(dec)?,
            },
            _ => return Err(DecodeError::BadTag { tag: 0, offset: at }),
        })
    }
}

impl Encode for ContractCall {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(self.method());
        match self {
            ContractCall::Transfer { to } => {
                enc.put(to);
            }
            ContractCall::ConfigurePublisher { service_ref }
            | ContractCall::ConfigureSubscriber { service_ref } => {
                enc.put(service_ref);
            }
            ContractCall::CommitService | ContractCall::SettlePayment => {}
            ContractCall::ReplaceDelegate { old, new } => {
                enc.put(old).put(new);
            }
        }
    }
}
