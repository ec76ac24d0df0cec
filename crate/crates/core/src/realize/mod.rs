//! Surface realization: skeleton turns to text.
//!
//! Templates are keyed by speaker and composite intent and carry `{slot}`
//! placeholders filled from [`SkeletonTurn::info_slots`]. A composite without
//! its own templates is realized by concatenating one template per atom.

mod external;
mod prompt;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Skeleton, SkeletonTurn};
use crate::model::{CompositeIntent, Dialogue, IntentError, Speaker};

pub use external::{trim_completion, ExternalGenerator, ExternalRealizer, Realized, TextSource};
pub use prompt::{build_prompt, estimate_tokens, PromptError, PromptSpec, Shot, ShotBank, GENERATION_CUE};

pub const BUILTIN_TEMPLATES_JSON: &str = include_str!("../../fixtures/templates.json");

/// Slot names a template may use.
pub const SLOT_NAMES: [&str; 9] = [
    "product",
    "items",
    "price",
    "asking",
    "offer",
    "item",
    "change",
    "feature",
    "previous_price",
];

#[derive(Debug, Error)]
pub enum RealizeError {
    #[error("no template for {speaker:?} `{intent}`")]
    MissingTemplate {
        speaker: Speaker,
        intent: CompositeIntent,
    },
    #[error("slot `{slot}` cannot be filled for `{intent}`")]
    UnresolvedSlot {
        slot: String,
        intent: CompositeIntent,
    },
    #[error("unknown slot `{slot}` in template `{template}`")]
    UnknownSlot { slot: String, template: String },
    #[error("malformed template `{0}`")]
    Malformed(String),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    text: String,
    slots: BTreeSet<String>,
}

impl Template {
    fn parse(text: &str) -> Result<Self, RealizeError> {
        let mut slots = BTreeSet::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| RealizeError::Malformed(text.to_string()))?;
            let name = &after[..close];
            if !SLOT_NAMES.contains(&name) {
                return Err(RealizeError::UnknownSlot {
                    slot: name.to_string(),
                    template: text.to_string(),
                });
            }
            slots.insert(name.to_string());
            rest = &after[close + 1..];
        }
        if rest.contains('}') {
            return Err(RealizeError::Malformed(text.to_string()));
        }
        Ok(Template {
            text: text.to_string(),
            slots,
        })
    }

    fn fill(&self, slots: &BTreeMap<String, String>) -> String {
        let mut out = self.text.clone();
        for name in &self.slots {
            out = out.replace(&format!("{{{name}}}"), &slots[name]);
        }
        out
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct TemplateEntry {
    speaker: Speaker,
    /// Rendered composite name, e.g. `Greet-Ask`.
    intent: String,
    templates: Vec<String>,
}

/// Templates keyed by speaker and composite intent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateLibrary {
    entries: BTreeMap<(Speaker, CompositeIntent), Vec<Template>>,
}

impl TemplateLibrary {
    pub fn from_json(text: &str) -> Result<Self, RealizeError> {
        let raw: Vec<TemplateEntry> = serde_json::from_str(text)?;
        let mut entries: BTreeMap<_, Vec<Template>> = BTreeMap::new();
        for e in raw {
            let intent = CompositeIntent::parse(&e.intent)?;
            let list = entries.entry((e.speaker, intent)).or_default();
            for t in e.templates {
                list.push(Template::parse(&t)?);
            }
        }
        Ok(TemplateLibrary { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RealizeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_TEMPLATES_JSON).expect("builtin templates parse")
    }

    pub fn keys(&self) -> impl Iterator<Item = &(Speaker, CompositeIntent)> {
        self.entries.keys()
    }

    /// Raw template strings for a key.
    pub fn templates(&self, speaker: Speaker, intent: &CompositeIntent) -> Vec<&str> {
        self.entries
            .get(&(speaker, intent.clone()))
            .map(|ts| ts.iter().map(|t| t.text.as_str()).collect())
            .unwrap_or_default()
    }

    /// Realizes one turn.
    ///
    /// A priced turn uses a template that states the price; a turn carrying
    /// an `item` slot (a bundle change) uses one that names the item.
    pub fn realize<R: Rng + ?Sized>(
        &self,
        turn: &SkeletonTurn,
        rng: &mut R,
    ) -> Result<String, RealizeError> {
        let slots = &turn.info_slots;
        let needs_price = turn.price_offer.is_some();
        let needs_item = slots.contains_key("item");
        let usable = |t: &&Template| t.slots.iter().all(|s| slots.contains_key(s));
        let covers = |ts: &[&Template]| {
            let has = |s: &str| ts.iter().any(|t| t.slots.contains(s));
            (!needs_price || has("price")) && (!needs_item || has("item") || has("change"))
        };

        if let Some(list) = self.entries.get(&(turn.speaker, turn.intent.clone())) {
            let candidates: Vec<&Template> = list
                .iter()
                .filter(usable)
                .filter(|t| covers(&[*t]))
                .collect();
            if let Some(t) = candidates.choose(rng) {
                return Ok(t.fill(slots));
            }
        }

        // one template per atom; the price goes on the first price-bearing atom
        let mut parts = Vec::new();
        let mut price_placed = false;
        for atom in turn.intent.atoms() {
            let key = (turn.speaker, CompositeIntent::single(*atom));
            let list = self
                .entries
                .get(&key)
                .ok_or_else(|| RealizeError::MissingTemplate {
                    speaker: turn.speaker,
                    intent: turn.intent.clone(),
                })?;
            let want_price = needs_price && !price_placed && atom.is_price_bearing();
            let options: Vec<&Template> = list
                .iter()
                .filter(usable)
                .filter(|t| !want_price || t.slots.contains("price"))
                .collect();
            let t = options
                .choose(rng)
                .ok_or_else(|| RealizeError::UnresolvedSlot {
                    slot: if want_price { "price" } else { "any" }.into(),
                    intent: turn.intent.clone(),
                })?;
            price_placed |= want_price;
            parts.push(*t);
        }
        if !covers(&parts) {
            let slot = if needs_price && !parts.iter().any(|t| t.slots.contains("price")) {
                "price"
            } else {
                "item"
            };
            return Err(RealizeError::UnresolvedSlot {
                slot: slot.into(),
                intent: turn.intent.clone(),
            });
        }
        Ok(parts
            .iter()
            .map(|t| t.fill(slots))
            .collect::<Vec<_>>()
            .join(" "))
    }

    /// Realizes every turn of a skeleton.
    pub fn realize_skeleton<R: Rng + ?Sized>(
        &self,
        skeleton: &Skeleton,
        rng: &mut R,
    ) -> Result<Dialogue, RealizeError> {
        let texts = skeleton
            .turns
            .iter()
            .map(|t| self.realize(t, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(skeleton.clone().into_dialogue(texts))
    }
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}
