use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Bundle, Price};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("concession rate `{name}` must be positive and finite, got {value}")]
    BadRate { name: &'static str, value: f64 },
    #[error("tolerance must lie in [0, 1), got {0}")]
    BadTolerance(f64),
    #[error("price-round limit d must be at least 1")]
    BadRoundLimit,
    #[error("max_turns ({max_turns}) must exceed d ({d})")]
    BadMaxTurns { max_turns: u32, d: u32 },
    #[error("inconsistent deal prices: {0}")]
    BadPrices(String),
}

/// Parameters shared by every negotiation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegotiationConfig {
    pub k_seller: f64,
    pub k_buyer: f64,
    pub tol: f64,
    /// Consecutive price-only rounds allowed before a bundle move is forced.
    pub d: u32,
    /// Price-round deadline after which the customer may walk away.
    pub max_turns: u32,
    pub rng_seed: u64,
}

impl Default for NegotiationConfig {
    fn default() -> Self {
        NegotiationConfig {
            k_seller: 0.6,
            k_buyer: 0.4,
            tol: 0.05,
            d: 2,
            max_turns: 20,
            rng_seed: 42,
        }
    }
}

impl NegotiationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [("k_seller", self.k_seller), ("k_buyer", self.k_buyer)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::BadRate { name, value });
            }
        }
        if !(0.0..1.0).contains(&self.tol) {
            return Err(ConfigError::BadTolerance(self.tol));
        }
        if self.d < 1 {
            return Err(ConfigError::BadRoundLimit);
        }
        if self.max_turns <= self.d {
            return Err(ConfigError::BadMaxTurns {
                max_turns: self.max_turns,
                d: self.d,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DealStatus {
    Open,
    Accepted,
    Rejected,
}

/// The live state of one negotiation, seen from the seller's desk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DealState {
    pub bundle: Bundle,
    /// Current asking price.
    pub seller_price: Price,
    /// Customer's latest offer.
    pub buyer_price: Price,
    /// Seller's reserve; never undercut.
    pub seller_min: Price,
    pub tol: f64,
    pub k_seller: f64,
    pub k_buyer: f64,
    /// Price-round index used in the concession exponent; starts at 0.
    pub t: u32,
    /// Consecutive price rounds since the last bundle change.
    pub price_rounds_used: u32,
    pub d: u32,
    pub max_turns: u32,
    pub status: DealStatus,
}

impl DealState {
    /// Opens a deal at the bundle's list price.
    pub fn open(
        bundle: Bundle,
        config: &NegotiationConfig,
        buyer_price: Price,
        seller_min: Price,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let seller_price = bundle.price();
        if buyer_price == Price::ZERO {
            return Err(ConfigError::BadPrices("buyer price must be positive".into()));
        }
        if seller_min > seller_price {
            return Err(ConfigError::BadPrices(format!(
                "seller minimum {seller_min} exceeds asking {seller_price}"
            )));
        }
        Ok(DealState {
            bundle,
            seller_price,
            buyer_price,
            seller_min,
            tol: config.tol,
            k_seller: config.k_seller,
            k_buyer: config.k_buyer,
            t: 0,
            price_rounds_used: 0,
            d: config.d,
            max_turns: config.max_turns,
            status: DealStatus::Open,
        })
    }

    pub fn is_open(&self) -> bool {
        self.status == DealStatus::Open
    }

    pub fn gap(&self) -> f64 {
        self.seller_price.as_f64() - self.buyer_price.as_f64()
    }

    /// True once `d` consecutive price rounds have been used.
    pub fn price_rounds_exhausted(&self) -> bool {
        self.price_rounds_used >= self.d
    }

    /// Moves an open deal to a terminal status. Returns false if the deal
    /// was already closed or `status` is `Open`.
    pub fn close(&mut self, status: DealStatus) -> bool {
        if self.status != DealStatus::Open || status == DealStatus::Open {
            return false;
        }
        self.status = status;
        true
    }
}
