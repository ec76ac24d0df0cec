//! Dialogue rewards for the agent.
//!
//! Four signals are combined linearly: intent consistency (classifier
//! probability of the intended act), price gap (final over initial price),
//! negotiation strategy (exponential in the margin above the seller's
//! reserve, signed by the outcome), and interactiveness (one minus the mean
//! bag-of-words cosine with earlier utterances of the same intent).

mod classifier;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_dialogue, CompositeIntent, Dialogue, OutcomeStatus, Price, Speaker, Violation,
};

pub use classifier::{train_classifier, ClassifierConfig, IntentClassifier, TrainReport};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("initial price must be positive")]
    ZeroInitialPrice,
    #[error("seller minimum must be positive")]
    ZeroMinPrice,
    #[error("intent `{0}` is not a classifier class")]
    UnknownClass(String),
    #[error("need at least two classes with {min} examples each: {detail}")]
    InsufficientData { min: usize, detail: String },
    #[error("invalid dialogue: {0:?}")]
    InvalidDialogue(Vec<Violation>),
    #[error("reward weights must be finite and non-negative: {0:?}")]
    BadWeights([f64; 4]),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Lowercased alphanumeric runs; digit strings are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn counts(text: &str) -> HashMap<String, f64> {
    let mut m = HashMap::new();
    for t in tokenize(text) {
        *m.entry(t).or_insert(0.0) += 1.0;
    }
    m
}

/// Cosine similarity of bag-of-words count vectors; 0 if either is empty.
pub fn cosine(a: &str, b: &str) -> f64 {
    let (ca, cb) = (counts(a), counts(b));
    let dot: f64 = ca
        .iter()
        .filter_map(|(t, x)| cb.get(t).map(|y| x * y))
        .sum();
    let na = ca.values().map(|x| x * x).sum::<f64>();
    let nb = cb.values().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        // sqrt of a product keeps identical vectors at exactly 1
        (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
    }
}

/// Classifier probability that `text` expresses `target`.
pub fn r1_intent_consistency(
    clf: &IntentClassifier,
    text: &str,
    target: &CompositeIntent,
) -> Result<f64, RewardError> {
    clf.prob(text, target)
}

/// Final price as a fraction of the initial price.
pub fn r2_price_gap(initial: Price, fin: Price) -> Result<f64, RewardError> {
    if initial == Price::ZERO {
        return Err(RewardError::ZeroInitialPrice);
    }
    Ok(fin.as_f64() / initial.as_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalIntent {
    Accept,
    Reject,
}

/// `F(x) * G` with `x = (Pb - P_min) / P_min`, `F(x) = e^x` for `x >= 0`
/// and 0 below the reserve, `G = +1` on accept and `-1` on reject.
pub fn r3_negotiation_strategy(
    buyer_price: Price,
    seller_min: Price,
    fin: FinalIntent,
) -> Result<f64, RewardError> {
    if seller_min == Price::ZERO {
        return Err(RewardError::ZeroMinPrice);
    }
    let x = (buyer_price.as_f64() - seller_min.as_f64()) / seller_min.as_f64();
    let f = if x < 0.0 { 0.0 } else { x.exp() };
    let g = match fin {
        FinalIntent::Accept => 1.0,
        FinalIntent::Reject => -1.0,
    };
    Ok(f * g)
}

/// One minus the mean cosine similarity with earlier utterances of the same
/// intent; 1 when there are none.
pub fn r4_interactiveness<S: AsRef<str>>(current: &str, prior_same_intent: &[S]) -> f64 {
    if prior_same_intent.is_empty() {
        return 1.0;
    }
    let mean = prior_same_intent
        .iter()
        .map(|p| cosine(current, p.as_ref()))
        .sum::<f64>()
        / prior_same_intent.len() as f64;
    (1.0 - mean).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub gamma: [f64; 4],
    /// Scale `gamma` to sum to one before use.
    pub renormalize: bool,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            gamma: [0.2, 0.2, 0.3, 0.2],
            renormalize: false,
        }
    }
}

impl RewardWeights {
    pub fn new(gamma: [f64; 4]) -> Result<Self, RewardError> {
        let w = RewardWeights {
            gamma,
            renormalize: false,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let ok = self.gamma.iter().all(|g| g.is_finite() && *g >= 0.0);
        if ok && (!self.renormalize || self.sum() > 0.0) {
            Ok(())
        } else {
            Err(RewardError::BadWeights(self.gamma))
        }
    }

    pub fn sum(&self) -> f64 {
        self.gamma.iter().sum()
    }

    /// The weights actually applied.
    pub fn effective(&self) -> [f64; 4] {
        if self.renormalize && self.sum() > 0.0 {
            let s = self.sum();
            self.gamma.map(|g| g / s)
        } else {
            self.gamma
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RewardError> {
        let w: RewardWeights = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }
}

/// `gamma . r`.
pub fn combined(r: [f64; 4], w: &RewardWeights) -> f64 {
    w.effective().iter().zip(r).map(|(g, x)| g * x).sum()
}

/// Per-turn reward. `r2` and `r3` are episode-level and present only on the
/// final agent turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r1: f64,
    pub r2: Option<f64>,
    pub r3: Option<f64>,
    pub r4: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// Components with absent episode-level terms as 0.
    pub fn components(&self) -> [f64; 4] {
        [self.r1, self.r2.unwrap_or(0.0), self.r3.unwrap_or(0.0), self.r4]
    }
}

/// `(x - mean) / std` with the population standard deviation; all zeros
/// when the batch is constant.
pub fn normalize_batch(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|x| (x - mean) / std).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueScore {
    /// `(turn index, breakdown)` for each agent turn.
    pub turns: Vec<(usize, RewardBreakdown)>,
    /// Mean of the per-turn totals.
    pub total: f64,
    pub initial_price: Price,
    /// Price used for the gap term: the deal price, or the last asking price.
    pub final_price: Price,
}

/// Scores every agent turn of a finished dialogue.
///
/// The gap term uses the agreed price, or the agent's last asking price if
/// the deal fell through. The strategy term uses the agreed price, or the
/// customer's last offer (zero if none was made).
pub fn score_dialogue(
    d: &Dialogue,
    clf: &IntentClassifier,
    w: &RewardWeights,
    seller_min: Price,
) -> Result<DialogueScore, RewardError> {
    let violations = validate_dialogue(d);
    if !violations.is_empty() {
        return Err(RewardError::InvalidDialogue(violations));
    }
    let agent_turns: Vec<usize> = d
        .turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.speaker == Speaker::Agent)
        .map(|(i, _)| i)
        .collect();
    let Some(&last_agent) = agent_turns.last() else {
        return Err(RewardError::InvalidDialogue(vec![]));
    };

    let initial = d.bundle.price();
    let last_price = |speaker: Speaker| {
        d.turns
            .iter()
            .rev()
            .filter(|t| t.speaker == speaker)
            .find_map(|t| t.price_offer)
    };
    let (fin, final_intent, buyer) = match (d.outcome.status, d.outcome.final_price) {
        (OutcomeStatus::Accepted, Some(p)) => (p, FinalIntent::Accept, p),
        _ => (
            last_price(Speaker::Agent).unwrap_or(initial),
            FinalIntent::Reject,
            last_price(Speaker::Customer).unwrap_or(Price::ZERO),
        ),
    };
    let r2 = r2_price_gap(initial, fin)?;
    let r3 = r3_negotiation_strategy(buyer, seller_min, final_intent)?;

    let mut turns = Vec::with_capacity(agent_turns.len());
    for &i in &agent_turns {
        let turn = &d.turns[i];
        let prior: Vec<&str> = agent_turns
            .iter()
            .take_while(|&&j| j < i)
            .map(|&j| &d.turns[j])
            .filter(|t| t.intent == turn.intent)
            .map(|t| t.text.as_str())
            .collect();
        // an intent the classifier never saw earns no consistency credit
        let r1 = match r1_intent_consistency(clf, &turn.text, &turn.intent) {
            Err(RewardError::UnknownClass(_)) => 0.0,
            other => other?,
        };
        let r4 = r4_interactiveness(&turn.text, &prior);
        let (r2, r3) = if i == last_agent {
            (Some(r2), Some(r3))
        } else {
            (None, None)
        };
        let mut b = RewardBreakdown {
            r1,
            r2,
            r3,
            r4,
            total: 0.0,
        };
        b.total = combined(b.components(), w);
        turns.push((i, b));
    }
    let total = turns.iter().map(|(_, b)| b.total).sum::<f64>() / turns.len() as f64;
    Ok(DialogueScore {
        turns,
        total,
        initial_price: initial,
        final_price: fin,
    })
}

/// `(text, intent)` pairs from every turn, for classifier training.
pub fn labeled_utterances<'a>(
    dialogues: impl IntoIterator<Item = &'a Dialogue>,
) -> Vec<(String, CompositeIntent)> {
    dialogues
        .into_iter()
        .flat_map(|d| d.turns.iter())
        .map(|t| (t.text.clone(), t.intent.clone()))
        .collect()
}

#[cfg(test)]
mod tests;
