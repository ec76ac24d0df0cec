//! Reference data: the annotated tablet transcript used as a golden trace.

use crate::model::Dialogue;

pub const REFERENCE_DIALOGUE_JSON: &str = include_str!("../fixtures/reference_dialogue.json");

/// The eight-turn tablet negotiation: stylus removed, 74700 offered,
/// settled at 83300 from an opening of 92800.
pub fn reference_dialogue() -> Dialogue {
    serde_json::from_str(REFERENCE_DIALOGUE_JSON).expect("reference dialogue fixture parses")
}
