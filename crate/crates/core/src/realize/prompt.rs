use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Skeleton, SkeletonTurn};
use crate::model::{Bundle, BundleOp, CompositeIntent, DealState, Dialogue, IntentAtom, Speaker};

/// Marks where the model should start writing.
pub const GENERATION_CUE: &str = "<start>";

const MAX_SHOTS: usize = 4;
const DEFAULT_BUDGET: usize = 2048;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("no example shots for {speaker:?} `{intent}`")]
    NoShotsForIntent {
        speaker: Speaker,
        intent: CompositeIntent,
    },
    #[error("prompt needs {needed} tokens with one shot, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub task_description: String,
    pub info_summary: String,
    pub example_utterance: String,
}

impl Shot {
    fn render(&self) -> String {
        format!(
            "{}\n{}\n{GENERATION_CUE} {}",
            self.task_description, self.info_summary, self.example_utterance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub intent: CompositeIntent,
    pub shots: Vec<Shot>,
    /// Task description and deal summary for the turn being generated.
    pub live_summary: String,
    pub token_budget: usize,
}

impl PromptSpec {
    /// Shots separated by blank lines, then the live summary and the cue.
    pub fn render(&self) -> String {
        let mut blocks: Vec<String> = self.shots.iter().map(Shot::render).collect();
        blocks.push(format!("{}\n{GENERATION_CUE}", self.live_summary));
        blocks.join("\n\n")
    }

    pub fn tokens(&self) -> usize {
        estimate_tokens(&self.render())
    }
}

/// Whitespace tokens times 1.3, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    (text.split_whitespace().count() as f64 * 1.3).ceil() as usize
}

/// Example shots by speaker and intent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotBank {
    shots: BTreeMap<Speaker, BTreeMap<CompositeIntent, Vec<Shot>>>,
}

impl ShotBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, speaker: Speaker, intent: CompositeIntent, shot: Shot) {
        self.shots
            .entry(speaker)
            .or_default()
            .entry(intent)
            .or_default()
            .push(shot);
    }

    pub fn get(&self, speaker: Speaker, intent: &CompositeIntent) -> &[Shot] {
        self.shots
            .get(&speaker)
            .and_then(|m| m.get(intent))
            .map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.shots.values().flat_map(|m| m.values()).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shots from realized dialogues, keeping at most `per_intent` for each
    /// speaker and intent.
    pub fn from_dialogues<'a>(
        pairs: impl IntoIterator<Item = (&'a Skeleton, &'a Dialogue)>,
        per_intent: usize,
    ) -> Self {
        let mut bank = ShotBank::new();
        for (sk, dlg) in pairs {
            let mut bundle = sk.bundle.clone();
            for (turn, text) in sk.turns.iter().zip(&dlg.turns) {
                if bank.get(turn.speaker, &turn.intent).len() < per_intent {
                    let product = bundle.main().name.clone();
                    bank.insert(
                        turn.speaker,
                        turn.intent.clone(),
                        Shot {
                            task_description: task_description(turn.speaker, &turn.intent, &product),
                            info_summary: info_summary(turn, &bundle, None),
                            example_utterance: text.text.clone(),
                        },
                    );
                }
                for op in &turn.bundle_ops {
                    if let Ok(next) = bundle.apply(op) {
                        bundle = next;
                    }
                }
            }
        }
        bank
    }
}

/// Assembles a few-shot prompt for `turn`.
///
/// `bundle` is the deal as it stood before the turn. Shots are dropped from
/// the end until the rendered prompt fits `token_budget` (2048 if `None`).
pub fn build_prompt(
    turn: &SkeletonTurn,
    state: &DealState,
    bundle: &Bundle,
    bank: &ShotBank,
    token_budget: Option<usize>,
) -> Result<PromptSpec, PromptError> {
    let budget = token_budget.unwrap_or(DEFAULT_BUDGET);
    let shots = bank.get(turn.speaker, &turn.intent);
    if shots.is_empty() {
        return Err(PromptError::NoShotsForIntent {
            speaker: turn.speaker,
            intent: turn.intent.clone(),
        });
    }
    let product = bundle.main().name.clone();
    let live_summary = format!(
        "{}\n{}",
        task_description(turn.speaker, &turn.intent, &product),
        info_summary(turn, bundle, Some(state))
    );
    let mut spec = PromptSpec {
        intent: turn.intent.clone(),
        shots: shots.iter().take(MAX_SHOTS).cloned().collect(),
        live_summary,
        token_budget: budget,
    };
    while spec.tokens() > budget && spec.shots.len() > 1 {
        spec.shots.pop();
    }
    let needed = spec.tokens();
    if needed > budget {
        return Err(PromptError::BudgetExceeded { needed, budget });
    }
    Ok(spec)
}

fn task_description(speaker: Speaker, intent: &CompositeIntent, product: &str) -> String {
    let (who, opener) = match speaker {
        Speaker::Customer => (
            "The customer",
            format!("A customer is negotiating with a seller about a {product}."),
        ),
        Speaker::Agent => (
            "The seller",
            format!("A seller is negotiating with a customer for a {product}."),
        ),
    };
    let act = intent
        .atoms()
        .iter()
        .rev()
        .find(|a| **a != IntentAtom::Greet && **a != IntentAtom::Inform)
        .or_else(|| intent.atoms().last())
        .copied()
        .unwrap_or(IntentAtom::Inform);
    let doing = match act {
        IntentAtom::Greet => "greets the other party",
        IntentAtom::Ask => "asks about the product",
        IntentAtom::Inform => "describes the deal",
        IntentAtom::AskClarification => "asks about a feature",
        IntentAtom::ProvideClarification => "explains the feature",
        IntentAtom::NegotiatePriceIncrease => "makes a counter-offer",
        IntentAtom::NegotiatePriceDecrease => "asks for a lower price",
        IntentAtom::NegotiatePriceNoChange => "endorses the product and keeps the price",
        IntentAtom::NegotiateAddX => "asks for another deal with an extra item",
        IntentAtom::NegotiateRemoveX => "asks for another deal without an item",
        IntentAtom::Accept => "accepts the deal",
        IntentAtom::Reject => "declines the deal",
        IntentAtom::Acknowledge => "closes the conversation politely",
        IntentAtom::AskPrice => "asks for the price",
        IntentAtom::TellPrice => "states the price",
        IntentAtom::AvoidRejection => "makes a last offer to keep the deal",
    };
    let greeting = if intent.contains(IntentAtom::Greet) {
        " after a greeting"
    } else {
        ""
    };
    format!("{opener} {who} {doing}{greeting} by saying.")
}

fn describe(bundle: &Bundle) -> String {
    let main = bundle.main();
    let mut s = format!("a {}", main.name);
    if !main.features.is_empty() {
        s.push_str(&format!(", it has {}", main.features.join(", ")));
    }
    let extras: Vec<&str> = bundle
        .active_items()
        .filter(|p| p.id != main.id)
        .map(|p| p.name.as_str())
        .collect();
    if !extras.is_empty() {
        s.push_str(&format!(", along with {}", extras.join(", ")));
    }
    s
}

fn info_summary(turn: &SkeletonTurn, bundle: &Bundle, state: Option<&DealState>) -> String {
    let slot = |k: &str| turn.info_slots.get(k).cloned();
    let mut lines = Vec::new();
    let asking = slot("previous_price").or_else(|| slot("asking"));
    match turn.bundle_ops.first() {
        Some(op) => {
            lines.push(format!("The initial deal was {}.", describe(bundle)));
            if let Some(p) = &asking {
                lines.push(format!("The price for this deal was {p}."));
            }
            let item = slot("item").unwrap_or_else(|| op.item_id().to_string());
            let change = match op {
                BundleOp::Add(_) => format!("add the {item} to the deal"),
                BundleOp::Remove(_) => format!("remove the {item} from the deal"),
            };
            let who = match turn.speaker {
                Speaker::Customer => "The customer wants",
                Speaker::Agent => "The seller proposes",
            };
            lines.push(format!("{who} to {change}."));
            if let Ok(next) = bundle.apply(op) {
                lines.push(format!("The new deal is {}.", describe(&next)));
            }
        }
        None => {
            lines.push(format!("The deal is {}.", describe(bundle)));
            if let Some(p) = &asking {
                lines.push(format!("The seller is asking {p}."));
            }
        }
    }
    if let (Speaker::Agent, Some(offer)) = (turn.speaker, slot("offer")) {
        lines.push(format!("The customer has offered {offer}."));
    }
    if let Some(p) = turn.price_offer {
        let who = match turn.speaker {
            Speaker::Customer => "The customer now offers",
            Speaker::Agent => "The seller now asks",
        };
        lines.push(format!("{who} {p}."));
    }
    if let Some(f) = slot("feature") {
        if turn.intent.contains(IntentAtom::AskClarification)
            || turn.intent.contains(IntentAtom::ProvideClarification)
        {
            lines.push(format!("The feature in question is {f}."));
        }
    }
    if let (Speaker::Agent, Some(st)) = (turn.speaker, state) {
        if turn.price_offer.is_some() {
            lines.push(format!(
                "(Remember, the seller cannot go lower than {})",
                st.seller_min
            ));
        }
    }
    lines.join(" ")
}
