//! Bundle negotiation engine.
//!
//! A seller agent and a customer bargain over a product bundle: price moves
//! follow exponential concession, bundle items can be added or removed, and
//! every turn is tagged with a dialogue intent. The crate covers dialogue
//! flow generation, text realization, reward computation, a clipped policy
//! optimizer for the agent, a simulation harness, and corpus persistence.

pub mod concession;
pub mod corpus;
pub mod examples;
pub mod flow;
pub mod model;
pub mod policy;
pub mod realize;
pub mod reward;
pub mod sim;

pub use model::*;
