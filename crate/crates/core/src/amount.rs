use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::codec::{Encode, Encoder};

/// Token amount in micro-token units (10^-6 token).
///
/// Integer units keep every conservation check exact.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Amount(pub u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);
    pub const UNITS_PER_TOKEN: u64 = 1_000_000;

    /// Fixed per-transaction fee on the inter-ledger: 0.001 tokens.
    pub const INTER_FEE: Amount = Amount(1_000);

    pub fn from_tokens(tokens: f64) -> Amount {
        Amount((tokens * Self::UNITS_PER_TOKEN as f64).round().max(0.0) as u64)
    }

    pub fn tokens(self) -> f64 {
        self.0 as f64 / Self::UNITS_PER_TOKEN as f64
    }

    pub fn checked_sub(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_sub(rhs.0).map(Amount)
    }

    pub fn checked_add(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_add(rhs.0).map(Amount)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        self.0 += rhs.0;
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0 - rhs.0)
    }
}

impl SubAssign for Amount {
    fn sub_assign(&mut self, rhs: Amount) {
        self.0 -= rhs.0;
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        Amount(iter.map(|a| a.0).sum())
    }
}

impl<'a> Sum<&'a Amount> for Amount {
    fn sum<I: Iterator<Item = &'a Amount>>(iter: I) -> Amount {
        Amount(iter.map(|a| a.0).sum())
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{:06}",
            self.0 / Self::UNITS_PER_TOKEN,
            self.0 % Self::UNITS_PER_TOKEN
        )
    }
}

impl Encode for Amount {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fee_is_one_thousandth_token() {
        assert_eq!(Amount::from_tokens(0.001), Amount::INTER_FEE);
        assert_eq!(Amount::INTER_FEE.to_string(), "0.001000");
    }

    #[test]
    fn token_conversion() {
        assert_eq!(Amount::from_tokens(10.0).0, 10_000_000);
        assert_eq!(Amount::from_tokens(-1.0), Amount::ZERO);
        assert_eq!(Amount(2_500_000).tokens(), 2.5);
    }
}
