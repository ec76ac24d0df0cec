use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Bundle, BundleOp, CompositeIntent, IntentAtom, Price};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Customer,
    Agent,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::Customer => Speaker::Agent,
            Speaker::Agent => Speaker::Customer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    #[serde(rename = "intents")]
    pub intent: CompositeIntent,
    pub text: String,
    #[serde(rename = "price")]
    pub price_offer: Option<Price>,
    #[serde(rename = "ops", default)]
    pub bundle_ops: Vec<BundleOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: OutcomeStatus,
    pub final_price: Option<Price>,
}

impl Outcome {
    pub fn accepted(price: Price) -> Self {
        Outcome {
            status: OutcomeStatus::Accepted,
            final_price: Some(price),
        }
    }

    pub fn rejected() -> Self {
        Outcome {
            status: OutcomeStatus::Rejected,
            final_price: None,
        }
    }
}

/// A complete negotiation: the opening bundle, the turns, and how it ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub bundle: Bundle,
    pub turns: Vec<DialogueTurn>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Bundle,
    Empty,
    OpeningSpeaker,
    OpeningGreet,
    Alternation,
    MissingPrice,
    UnexpectedPrice,
    BundleOp,
    Terminal,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending turn index; `None` for dialogue-level rules.
    pub turn: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.turn {
            Some(t) => write!(f, "turn {t}: {:?}: {}", self.rule, self.detail),
            None => write!(f, "{:?}: {}", self.rule, self.detail),
        }
    }
}

/// Checks the structural rules a dialogue must satisfy. Returns every
/// violation found; an empty list means the dialogue is well formed.
pub fn validate_dialogue(d: &Dialogue) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |turn: Option<usize>, rule: Rule, detail: String| {
        out.push(Violation { turn, rule, detail })
    };

    if let Err(e) = d.bundle.check() {
        push(None, Rule::Bundle, e.to_string());
    }

    let Some(first) = d.turns.first() else {
        push(None, Rule::Empty, "dialogue has no turns".into());
        return out;
    };
    if first.speaker != Speaker::Customer {
        push(Some(0), Rule::OpeningSpeaker, "customer must open".into());
    }
    if !first.intent.contains(IntentAtom::Greet) {
        push(Some(0), Rule::OpeningGreet, "opening turn must greet".into());
    }

    let mut bundle = d.bundle.clone();
    let last = d.turns.len() - 1;
    for (i, turn) in d.turns.iter().enumerate() {
        if i > 0 && turn.speaker == d.turns[i - 1].speaker {
            push(Some(i), Rule::Alternation, "same speaker twice in a row".into());
        }

        let prior_ops = i > 0 && !d.turns[i - 1].bundle_ops.is_empty();
        let repricing = !turn.bundle_ops.is_empty() || prior_ops;
        match (turn.intent.is_price_bearing(), turn.price_offer) {
            (true, None) => push(
                Some(i),
                Rule::MissingPrice,
                format!("{} must carry a price", turn.intent),
            ),
            (false, Some(p)) if !repricing => push(
                Some(i),
                Rule::UnexpectedPrice,
                format!("{} carries price {p} without a re-pricing op", turn.intent),
            ),
            _ => {}
        }

        for op in &turn.bundle_ops {
            match bundle.apply(op) {
                Ok(next) => bundle = next,
                Err(e) => push(Some(i), Rule::BundleOp, e.to_string()),
            }
        }

        if i < last {
            for atom in [IntentAtom::Reject, IntentAtom::Acknowledge] {
                if turn.intent.contains(atom) {
                    push(
                        Some(i),
                        Rule::Terminal,
                        format!("{atom} may only appear on the final turn"),
                    );
                }
            }
        }
    }

    let end = &d.turns[last];
    let closed_by_ack = end.intent.contains(IntentAtom::Acknowledge)
        && last > 0
        && (d.turns[last - 1].intent.contains(IntentAtom::Accept)
            || d.turns[last - 1].intent.contains(IntentAtom::AvoidRejection));
    let closed_by_reject = end.intent.contains(IntentAtom::Reject);
    if !closed_by_ack && !closed_by_reject {
        push(
            Some(last),
            Rule::Terminal,
            "final turn must acknowledge an acceptance or reject".into(),
        );
    }

    match (d.outcome.status, d.outcome.final_price) {
        (OutcomeStatus::Accepted, None) => {
            push(None, Rule::Outcome, "accepted outcome without final price".into())
        }
        (OutcomeStatus::Rejected, Some(_)) => {
            push(None, Rule::Outcome, "rejected outcome with a final price".into())
        }
        _ => {}
    }
    match d.outcome.status {
        OutcomeStatus::Accepted if !closed_by_ack => push(
            None,
            Rule::Outcome,
            "accepted outcome must end with an acknowledgment".into(),
        ),
        OutcomeStatus::Rejected if !closed_by_reject => push(
            None,
            Rule::Outcome,
            "rejected outcome must end with a rejection".into(),
        ),
        _ => {}
    }

    out
}
