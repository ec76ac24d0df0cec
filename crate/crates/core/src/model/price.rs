use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// An amount of money in integer minor units.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Price(pub u64);

impl Price {
    pub const ZERO: Price = Price(0);

    /// Rounds a real-valued amount half-up to the nearest minor unit.
    /// Negative and non-finite inputs saturate at zero.
    pub fn round_half_up(amount: f64) -> Price {
        if !amount.is_finite() || amount <= 0.0 {
            return Price(0);
        }
        Price((amount + 0.5).floor() as u64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn minor_units(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: Price) -> Price {
        Price(self.0.saturating_sub(other.0))
    }

    /// Scales by a ratio and rounds half-up.
    pub fn scale(self, ratio: f64) -> Price {
        Price::round_half_up(self.as_f64() * ratio)
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.0)
    }
}

impl From<u64> for Price {
    fn from(v: u64) -> Self {
        Price(v)
    }
}

impl Add for Price {
    type Output = Price;
    fn add(self, rhs: Price) -> Price {
        Price(self.0 + rhs.0)
    }
}

impl Sub for Price {
    type Output = Price;
    fn sub(self, rhs: Price) -> Price {
        Price(self.0 - rhs.0)
    }
}

impl Sum for Price {
    fn sum<I: Iterator<Item = Price>>(iter: I) -> Price {
        iter.fold(Price::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Price> for Price {
    fn sum<I: Iterator<Item = &'a Price>>(iter: I) -> Price {
        iter.copied().sum()
    }
}
