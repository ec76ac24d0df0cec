//! Domain types shared by every stage: products and bundles, intents,
//! dialogues, and the live deal state.

mod bundle;
mod catalog;
mod deal;
mod dialogue;
mod intent;
mod price;

pub use bundle::{apply_bundle_op, bundle_price, Bundle, BundleError, BundleOp, Product, ProductKind};
pub use catalog::{Catalog, CatalogEntry, CatalogError};
pub use deal::{ConfigError, DealState, DealStatus, NegotiationConfig};
pub use dialogue::{
    validate_dialogue, Dialogue, DialogueTurn, Outcome, OutcomeStatus, Rule, Speaker, Violation,
};
pub use intent::{CompositeIntent, IntentAtom, IntentError};
pub use price::Price;

#[cfg(test)]
pub(crate) use bundle::fixtures;
