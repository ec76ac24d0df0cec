//! Exponential price concession and the accept/reject rules that end a deal.
//!
//! Both parties move toward the other's last price by a fraction
//! `exp(-k * t)` of the remaining gap, where `t` counts price rounds.
//! The seller never goes below its reserve and the customer never offers
//! more than the seller is asking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DealState, DealStatus, NegotiationConfig, Price};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConcessionError {
    #[error("invalid deal state: {0}")]
    InvalidState(String),
}

fn check_counter(state: &DealState) -> Result<(), ConcessionError> {
    check_open(state)?;
    if state.t < 1 {
        return Err(ConcessionError::InvalidState(
            "price rounds start at t = 1".into(),
        ));
    }
    if state.seller_price < state.buyer_price {
        return Err(ConcessionError::InvalidState(format!(
            "crossed prices: asking {} below offer {}",
            state.seller_price, state.buyer_price
        )));
    }
    Ok(())
}

fn check_open(state: &DealState) -> Result<(), ConcessionError> {
    if state.status != DealStatus::Open {
        return Err(ConcessionError::InvalidState(format!(
            "deal is {:?}",
            state.status
        )));
    }
    Ok(())
}

/// Seller's next asking price, floored at the reserve.
pub fn seller_counter(state: &DealState) -> Result<Price, ConcessionError> {
    check_counter(state)?;
    let (ps, pb) = (state.seller_price, state.buyer_price);
    let decay = (-state.k_seller * state.t as f64).exp();
    let raw = Price::round_half_up(pb.as_f64() + (ps.as_f64() - pb.as_f64()) * decay);
    let lower = pb.max(state.seller_min).min(ps);
    Ok(raw.clamp(lower, ps))
}

/// Customer's next offer, never above the current asking price.
pub fn buyer_counter(state: &DealState) -> Result<Price, ConcessionError> {
    check_counter(state)?;
    let (ps, pb) = (state.seller_price, state.buyer_price);
    let decay = (-state.k_buyer * state.t as f64).exp();
    let raw = Price::round_half_up(ps.as_f64() - (ps.as_f64() - pb.as_f64()) * decay);
    Ok(raw.clamp(pb, ps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SellerDecision {
    AcceptDeal,
    Counter,
}

/// Accepts any offer within `tol` of the current asking price.
pub fn seller_decision(state: &DealState, offer: Price) -> Result<SellerDecision, ConcessionError> {
    check_open(state)?;
    let threshold = state.seller_price.as_f64() * (1.0 - state.tol);
    Ok(if offer.as_f64() >= threshold {
        SellerDecision::AcceptDeal
    } else {
        SellerDecision::Counter
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuyerDecision {
    AcceptDeal,
    Counter,
    RejectDeal,
}

/// Customer's reply to a new asking price.
///
/// `state.seller_price` must still hold the previous round's asking price so
/// the "did the seller move" check can compare against it.
pub fn buyer_decision(
    state: &DealState,
    asking: Price,
    budget_ceiling: Price,
) -> Result<BuyerDecision, ConcessionError> {
    check_open(state)?;
    if asking <= budget_ceiling {
        return Ok(BuyerDecision::AcceptDeal);
    }
    if state.t > state.max_turns && asking >= state.seller_price {
        return Ok(BuyerDecision::RejectDeal);
    }
    Ok(BuyerDecision::Counter)
}

/// Ceiling used when the customer's budget is not given explicitly.
pub fn default_ceiling(buyer_open: Price) -> Price {
    buyer_open.scale(1.15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceRound {
    pub t: u32,
    pub seller: Price,
    pub buyer: Price,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceTerminal {
    Accepted(Price),
    Rejected,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceTrace {
    pub rounds: Vec<PriceRound>,
    pub terminal: TraceTerminal,
}

/// Runs a price-only negotiation between the exponential seller and a
/// budget-capped customer.
///
/// Each round the customer offers (the opening offer first, then
/// [`buyer_counter`] capped at `ceiling`), the seller accepts or counters, and
/// the customer accepts, rejects at the deadline, or continues. Rounds stop
/// at `2 * max_turns + 1` with [`TraceTerminal::Exhausted`].
pub fn price_trace(
    config: &NegotiationConfig,
    seller_open: Price,
    buyer_open: Price,
    seller_min: Price,
    ceiling: Price,
) -> Result<PriceTrace, ConcessionError> {
    config
        .validate()
        .map_err(|e| ConcessionError::InvalidState(e.to_string()))?;
    if buyer_open == Price::ZERO || seller_open <= buyer_open {
        return Err(ConcessionError::InvalidState(format!(
            "need asking > offer > 0, got {seller_open} and {buyer_open}"
        )));
    }
    if seller_min > seller_open {
        return Err(ConcessionError::InvalidState(format!(
            "reserve {seller_min} above opening {seller_open}"
        )));
    }

    let mut state = PriceState {
        seller: seller_open,
        buyer: buyer_open,
        seller_min,
        ceiling,
        config,
    };
    let mut rounds = Vec::new();
    let limit = 2 * config.max_turns + 1;
    for t in 1..=limit {
        let round = state.step(t)?;
        rounds.push(PriceRound {
            t,
            seller: state.seller,
            buyer: state.buyer,
        });
        if let Some(terminal) = round {
            return Ok(PriceTrace { rounds, terminal });
        }
    }
    Ok(PriceTrace {
        rounds,
        terminal: TraceTerminal::Exhausted,
    })
}

struct PriceState<'a> {
    seller: Price,
    buyer: Price,
    seller_min: Price,
    ceiling: Price,
    config: &'a NegotiationConfig,
}

impl PriceState<'_> {
    fn deal(&self, t: u32) -> DealState {
        DealState {
            bundle: crate::model::Bundle {
                id: String::new(),
                items: Vec::new(),
                active: Default::default(),
            },
            seller_price: self.seller,
            buyer_price: self.buyer,
            seller_min: self.seller_min,
            tol: self.config.tol,
            k_seller: self.config.k_seller,
            k_buyer: self.config.k_buyer,
            t,
            price_rounds_used: 0,
            d: self.config.d,
            max_turns: self.config.max_turns,
            status: DealStatus::Open,
        }
    }

    fn step(&mut self, t: u32) -> Result<Option<TraceTerminal>, ConcessionError> {
        if t > 1 {
            let counter = buyer_counter(&self.deal(t))?;
            self.buyer = capped_offer(counter, self.buyer, self.ceiling);
        }
        let deal = self.deal(t);
        if seller_decision(&deal, self.buyer)? == SellerDecision::AcceptDeal {
            return Ok(Some(TraceTerminal::Accepted(self.buyer)));
        }
        let asking = seller_counter(&deal)?;
        let decision = buyer_decision(&deal, asking, self.ceiling)?;
        self.seller = asking;
        Ok(match decision {
            BuyerDecision::AcceptDeal => Some(TraceTerminal::Accepted(asking)),
            BuyerDecision::RejectDeal => Some(TraceTerminal::Rejected),
            BuyerDecision::Counter => None,
        })
    }
}

/// A customer never offers beyond its budget, and never walks its offer back.
pub fn capped_offer(counter: Price, previous: Price, ceiling: Price) -> Price {
    counter.min(ceiling.max(previous))
}
