//! Dialogue-flow generation.
//!
//! A simulated customer and a seller agent alternate turns over a bundle.
//! The customer opens with a greeting, bargains on price for at most `d`
//! consecutive rounds before it must change the bundle, and accepts or walks
//! away according to its budget. The agent answers each customer act with an
//! [`AgentMove`]; the rule-based agent uses the concession engine, while a
//! learned policy can be plugged in through [`AgentStrategy`].
//!
//! The output is a [`Skeleton`]: intents, prices, bundle operations and the
//! slot values needed to realize each turn as text.

mod engine;
mod moves;
mod table;

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concession::ConcessionError;
use crate::model::{
    Bundle, BundleError, BundleOp, Catalog, CompositeIntent, ConfigError, Dialogue, DialogueTurn,
    IntentError, NegotiationConfig, Outcome, Price, Speaker,
};

pub use engine::{run_flow, AgentStep, CustomerAction, FlowRecord, Negotiation};
pub use moves::{
    legal_moves, next_agent_intent, next_customer_intent, primary_act, AgentChoice, AgentMove,
    AgentStrategy, AgentView, CustomerContext, RuleAgent,
};
pub use table::{FlowPolicyTable, Weighted};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("the deal is already closed")]
    ClosedDeal,
    #[error("no agent rule for customer intent `{0}`")]
    UnmappedIntent(CompositeIntent),
    #[error("no legal move for the agent")]
    NoLegalMove,
    #[error("illegal move {0:?}")]
    IllegalMove(AgentMove),
    #[error("catalog has no bundles")]
    EmptyCatalog,
    #[error("corpus size must be positive")]
    EmptyRequest,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Concession(#[from] ConcessionError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error("invalid turn: {0}")]
    InvalidTurn(String),
    #[error("agent strategy failed: {0}")]
    Strategy(String),
}

/// A turn without surface text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTurn {
    pub speaker: Speaker,
    pub intent: CompositeIntent,
    pub price_offer: Option<Price>,
    pub bundle_ops: Vec<BundleOp>,
    /// Values a realizer may substitute: `product`, `items`, `price`,
    /// `asking`, `offer`, `item`, `change`, `feature`, `previous_price`.
    pub info_slots: BTreeMap<String, String>,
}

/// Hidden parameters a negotiation was generated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DealSetup {
    pub list_price: Price,
    pub buyer_open: Price,
    pub seller_min: Price,
    pub ceiling: Price,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub id: String,
    pub bundle: Bundle,
    pub setup: DealSetup,
    pub turns: Vec<SkeletonTurn>,
    pub outcome: Outcome,
}

impl Skeleton {
    /// Attaches surface text to each turn. `texts` must match `turns` in length.
    pub fn into_dialogue(self, texts: Vec<String>) -> Dialogue {
        assert_eq!(texts.len(), self.turns.len(), "one text per turn");
        let turns = self
            .turns
            .into_iter()
            .zip(texts)
            .map(|(t, text)| DialogueTurn {
                speaker: t.speaker,
                intent: t.intent,
                text,
                price_offer: t.price_offer,
                bundle_ops: t.bundle_ops,
            })
            .collect();
        Dialogue {
            id: self.id,
            bundle: self.bundle,
            turns,
            outcome: self.outcome,
        }
    }

    /// The skeleton as a dialogue with empty texts, for structural checks.
    pub fn as_dialogue(&self) -> Dialogue {
        let texts = vec![String::new(); self.turns.len()];
        self.clone().into_dialogue(texts)
    }
}

/// How the simulated customer behaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuyerProfile {
    /// Opening offer as a fraction of list price, sampled uniformly.
    pub open_range: (f64, f64),
    /// Budget ceiling as a multiple of the opening offer.
    pub ceiling_markup: f64,
    /// Chance of a clarification exchange before each customer move.
    pub clarification_prob: f64,
}

impl Default for BuyerProfile {
    fn default() -> Self {
        BuyerProfile {
            open_range: (0.75, 0.90),
            ceiling_markup: 1.15,
            clarification_prob: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SellerProfile {
    /// Reserve price as a fraction of list price, sampled uniformly.
    pub min_range: (f64, f64),
    /// Chance the rule agent holds its price instead of conceding.
    pub no_change_prob: f64,
}

impl Default for SellerProfile {
    fn default() -> Self {
        SellerProfile {
            min_range: (0.80, 0.95),
            no_change_prob: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub negotiation: NegotiationConfig,
    pub buyer: BuyerProfile,
    pub seller: SellerProfile,
    /// Hard cap on utterances; the customer walks away when it is reached.
    pub max_dialogue_turns: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            negotiation: NegotiationConfig::default(),
            buyer: BuyerProfile::default(),
            seller: SellerProfile::default(),
            max_dialogue_turns: 120,
        }
    }
}

impl FlowConfig {
    /// Transition table with this config's no-change probability.
    pub fn table(&self) -> FlowPolicyTable {
        FlowPolicyTable::with_no_change_prob(self.seller.no_change_prob)
    }

    pub fn with_negotiation(negotiation: NegotiationConfig) -> Self {
        FlowConfig {
            negotiation,
            ..FlowConfig::default()
        }
    }
}

/// Samples the hidden prices for one negotiation over `bundle`.
pub fn sample_setup<R: Rng + ?Sized>(bundle: &Bundle, config: &FlowConfig, rng: &mut R) -> DealSetup {
    let list_price = bundle.price();
    let frac = |(lo, hi): (f64, f64), rng: &mut R| {
        if hi > lo {
            rng.gen_range(lo..hi)
        } else {
            lo
        }
    };
    let buyer_open = list_price
        .scale(frac(config.buyer.open_range, rng))
        .max(Price(1));
    let seller_min = list_price
        .scale(frac(config.seller.min_range, rng))
        .min(list_price);
    let ceiling = buyer_open.scale(config.buyer.ceiling_markup);
    DealSetup {
        list_price,
        buyer_open,
        seller_min,
        ceiling,
    }
}

/// One rule-based skeleton over `bundle`.
pub fn generate_skeleton<R: Rng>(
    bundle: &Bundle,
    config: &FlowConfig,
    rng: &mut R,
) -> Result<Skeleton, FlowError> {
    let setup = sample_setup(bundle, config, rng);
    let mut agent = RuleAgent::new(config.table());
    let record = run_flow(bundle, setup, config, &mut agent, rng)?;
    Ok(record.skeleton)
}

/// Derives one independent seed per item from a master RNG.
pub fn derive_seeds<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> Vec<u64> {
    (0..n).map(|_| rng.next_u64()).collect()
}

/// `n` skeletons over bundles drawn uniformly from the catalog.
pub fn generate_corpus<R: RngCore + ?Sized>(
    catalog: &Catalog,
    n: usize,
    config: &FlowConfig,
    rng: &mut R,
) -> Result<Vec<Skeleton>, FlowError> {
    use rayon::prelude::*;

    let bundles = catalog.bundles();
    if bundles.is_empty() {
        return Err(FlowError::EmptyCatalog);
    }
    if n == 0 {
        return Err(FlowError::EmptyRequest);
    }
    config.negotiation.validate()?;
    derive_seeds(rng, n)
        .into_par_iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bundle = &bundles[rng.gen_range(0..bundles.len())];
            let mut sk = generate_skeleton(bundle, config, &mut rng)?;
            sk.id = format!("dlg-{i:05}");
            Ok(sk)
        })
        .collect()
}

#[cfg(test)]
mod tests;
