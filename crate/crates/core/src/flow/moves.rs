use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{FlowError, FlowPolicyTable, SkeletonTurn};
use crate::concession::{seller_decision, BuyerDecision, SellerDecision};
use crate::intent;
use crate::model::{CompositeIntent, DealState, IntentAtom, Price, Speaker};

/// What the agent does in reply to a customer turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMove {
    Inform,
    TellPrice,
    ProvideClarification,
    Acknowledge,
    /// Restate the current asking price.
    HoldPrice,
    /// Move halfway toward the exponential counter-offer.
    ConcedeSmall,
    /// Counter with the exponential counter-offer.
    ConcedeFull,
    Accept,
    Reject,
    ProposeAdd,
    ProposeRemove,
}

impl AgentMove {
    pub const ALL: [AgentMove; 11] = [
        AgentMove::Inform,
        AgentMove::TellPrice,
        AgentMove::ProvideClarification,
        AgentMove::Acknowledge,
        AgentMove::HoldPrice,
        AgentMove::ConcedeSmall,
        AgentMove::ConcedeFull,
        AgentMove::Accept,
        AgentMove::Reject,
        AgentMove::ProposeAdd,
        AgentMove::ProposeRemove,
    ];

    pub fn atom(self) -> IntentAtom {
        match self {
            AgentMove::Inform => IntentAtom::Inform,
            AgentMove::TellPrice => IntentAtom::TellPrice,
            AgentMove::ProvideClarification => IntentAtom::ProvideClarification,
            AgentMove::Acknowledge => IntentAtom::Acknowledge,
            AgentMove::HoldPrice => IntentAtom::NegotiatePriceNoChange,
            AgentMove::ConcedeSmall | AgentMove::ConcedeFull => IntentAtom::NegotiatePriceIncrease,
            AgentMove::Accept => IntentAtom::Accept,
            AgentMove::Reject => IntentAtom::Reject,
            AgentMove::ProposeAdd => IntentAtom::NegotiateAddX,
            AgentMove::ProposeRemove => IntentAtom::NegotiateRemoveX,
        }
    }

    /// Moves that only restate or change the price.
    pub fn is_price_only(self) -> bool {
        matches!(
            self,
            AgentMove::HoldPrice | AgentMove::ConcedeSmall | AgentMove::ConcedeFull
        )
    }

    /// The intent this move realizes when answering `customer`.
    ///
    /// A greeting is returned in kind; a price move that answers a greeting
    /// is framed as `Greet-Inform-<price act>`.
    pub fn intent_for(self, customer: &CompositeIntent) -> CompositeIntent {
        let core = CompositeIntent::single(self.atom());
        if !customer.contains(IntentAtom::Greet) {
            return core;
        }
        let atoms = if self.is_price_only() {
            vec![IntentAtom::Greet, IntentAtom::Inform, self.atom()]
        } else {
            vec![IntentAtom::Greet, self.atom()]
        };
        CompositeIntent::new(atoms).expect("greeting composites are valid")
    }
}

/// The customer act an agent reply is keyed on, by precedence.
pub fn primary_act(customer: &CompositeIntent) -> IntentAtom {
    const ORDER: [IntentAtom; 11] = [
        IntentAtom::Reject,
        IntentAtom::Acknowledge,
        IntentAtom::Accept,
        IntentAtom::NegotiatePriceDecrease,
        IntentAtom::NegotiateRemoveX,
        IntentAtom::NegotiateAddX,
        IntentAtom::AskPrice,
        IntentAtom::AskClarification,
        IntentAtom::Ask,
        IntentAtom::Inform,
        IntentAtom::Greet,
    ];
    ORDER
        .into_iter()
        .find(|a| customer.contains(*a))
        .unwrap_or(customer.atoms()[0])
}

/// Agent moves permitted in reply to `customer` in `state`.
pub fn legal_moves(
    customer: &CompositeIntent,
    state: &DealState,
) -> Result<Vec<AgentMove>, FlowError> {
    use AgentMove::*;
    Ok(match primary_act(customer) {
        IntentAtom::Accept => vec![Acknowledge],
        IntentAtom::NegotiatePriceDecrease => {
            let can_add = state.bundle.addable().next().is_some();
            let can_remove = state.bundle.removable().next().is_some();
            let mut moves = Vec::new();
            if !state.price_rounds_exhausted() || !(can_add || can_remove) {
                moves.extend([HoldPrice, ConcedeSmall, ConcedeFull]);
            }
            moves.extend([Accept, Reject]);
            if can_add {
                moves.push(ProposeAdd);
            }
            if can_remove {
                moves.push(ProposeRemove);
            }
            moves
        }
        IntentAtom::NegotiateAddX | IntentAtom::NegotiateRemoveX => vec![Inform],
        IntentAtom::AskPrice => vec![TellPrice],
        IntentAtom::AskClarification => vec![ProvideClarification],
        IntentAtom::Ask | IntentAtom::Inform | IntentAtom::Greet => vec![Inform],
        _ => return Err(FlowError::UnmappedIntent(customer.clone())),
    })
}

/// What an agent strategy sees when choosing a move.
pub struct AgentView<'a> {
    pub state: &'a DealState,
    pub customer: &'a CompositeIntent,
    /// The customer's standing offer, if any has been made.
    pub offer: Option<Price>,
    pub legal: &'a [AgentMove],
    pub history: &'a [SkeletonTurn],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentChoice {
    pub mv: AgentMove,
    /// Log-probability under the behavior policy, for stochastic strategies.
    pub log_prob: Option<f64>,
}

pub trait AgentStrategy {
    fn choose(&mut self, view: &AgentView<'_>, rng: &mut dyn RngCore)
        -> Result<AgentChoice, FlowError>;
}

/// The scripted seller: tolerance rule for acceptance, otherwise concede by
/// the exponential schedule or hold the price.
#[derive(Debug, Clone)]
pub struct RuleAgent {
    table: FlowPolicyTable,
}

impl RuleAgent {
    pub fn new(table: FlowPolicyTable) -> Self {
        RuleAgent { table }
    }

    fn hold_prob(&self) -> f64 {
        let key = intent!(NegotiatePriceDecrease);
        let hold = self.table.agent_weight(&key, &intent!(NegotiatePriceNoChange));
        let concede = self.table.agent_weight(&key, &intent!(NegotiatePriceIncrease));
        if hold + concede > 0.0 {
            hold / (hold + concede)
        } else {
            0.0
        }
    }
}

impl Default for RuleAgent {
    fn default() -> Self {
        RuleAgent::new(FlowPolicyTable::default())
    }
}

impl AgentStrategy for RuleAgent {
    fn choose(
        &mut self,
        view: &AgentView<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<AgentChoice, FlowError> {
        let pick = |mv| Ok(AgentChoice { mv, log_prob: None });
        match view.legal {
            [] => Err(FlowError::NoLegalMove),
            [only] => pick(*only),
            legal => {
                let offer = view.offer.unwrap_or(view.state.buyer_price);
                if seller_decision(view.state, offer)? == SellerDecision::AcceptDeal {
                    return pick(AgentMove::Accept);
                }
                let hold = rng.gen_bool(self.hold_prob().clamp(0.0, 1.0));
                let preferred = if hold {
                    AgentMove::HoldPrice
                } else {
                    AgentMove::ConcedeFull
                };
                if legal.contains(&preferred) {
                    return pick(preferred);
                }
                // price moves are masked: steer the bundle instead
                let bundle_moves: Vec<_> = legal
                    .iter()
                    .copied()
                    .filter(|m| matches!(m, AgentMove::ProposeAdd | AgentMove::ProposeRemove))
                    .collect();
                match bundle_moves.choose(rng) {
                    Some(mv) => pick(*mv),
                    None => pick(AgentMove::Accept),
                }
            }
        }
    }
}

/// The rule agent's reply intent to `customer`.
pub fn next_agent_intent(
    state: &DealState,
    customer: &CompositeIntent,
    table: &FlowPolicyTable,
    rng: &mut dyn RngCore,
) -> Result<CompositeIntent, FlowError> {
    if !state.is_open() {
        return Err(FlowError::ClosedDeal);
    }
    let legal = legal_moves(customer, state)?;
    let view = AgentView {
        state,
        customer,
        offer: Some(state.buyer_price),
        legal: &legal,
        history: &[],
    };
    let choice = RuleAgent::new(table.clone()).choose(&view, rng)?;
    Ok(choice.mv.intent_for(customer))
}

/// Inputs to the simulated customer's next move.
pub struct CustomerContext<'a> {
    pub state: &'a DealState,
    pub history: &'a [SkeletonTurn],
    /// Budget verdict on the agent's latest asking price, if one was stated.
    pub decision: Option<BuyerDecision>,
    pub table: &'a FlowPolicyTable,
    pub clarification_prob: f64,
}

/// Samples the customer's next intent.
pub fn next_customer_intent<R: Rng + ?Sized>(
    ctx: &CustomerContext<'_>,
    rng: &mut R,
) -> Result<CompositeIntent, FlowError> {
    let state = ctx.state;
    let last_agent = ctx
        .history
        .iter()
        .rev()
        .find(|t| t.speaker == Speaker::Agent);
    if let Some(last) = last_agent {
        if last.intent.contains(IntentAtom::Accept) {
            return Ok(intent!(Acknowledge));
        }
    }
    if !state.is_open() {
        return Err(FlowError::ClosedDeal);
    }
    match ctx.decision {
        Some(BuyerDecision::AcceptDeal) => return Ok(intent!(Accept)),
        Some(BuyerDecision::RejectDeal) => return Ok(intent!(Reject)),
        _ => {}
    }

    let can_add = state.bundle.addable().next().is_some();
    let can_remove = state.bundle.removable().next().is_some();
    let price_masked = state.price_rounds_exhausted() && (can_add || can_remove);
    let legal = |ci: &CompositeIntent| {
        !(ci.contains(IntentAtom::NegotiateAddX) && !can_add)
            && !(ci.contains(IntentAtom::NegotiateRemoveX) && !can_remove)
            && !(ci.contains(IntentAtom::NegotiatePriceDecrease) && price_masked)
    };

    let Some(last) = last_agent else {
        return sample(&ctx.table.opening, legal, rng)
            .ok_or_else(|| FlowError::UnmappedIntent(intent!(Greet)));
    };

    if rng.gen_bool(ctx.clarification_prob.clamp(0.0, 1.0)) {
        return Ok(intent!(AskClarification));
    }
    let key = last.intent.without_greet().unwrap_or_else(|| last.intent.clone());
    let fallback;
    let successors = match ctx.table.customer_transitions.get(&key) {
        Some(s) => s,
        None => {
            fallback = FlowPolicyTable::default()
                .customer_transitions
                .remove(&intent!(NegotiatePriceIncrease))
                .expect("default table has price successors");
            &fallback
        }
    };
    Ok(sample(successors, legal, rng).unwrap_or_else(|| intent!(NegotiatePriceDecrease)))
}

fn sample<R: Rng + ?Sized>(
    options: &[super::Weighted],
    legal: impl Fn(&CompositeIntent) -> bool,
    rng: &mut R,
) -> Option<CompositeIntent> {
    let live: Vec<_> = options
        .iter()
        .filter(|w| w.weight > 0.0 && legal(&w.intent))
        .collect();
    live.choose_weighted(rng, |w| w.weight)
        .ok()
        .map(|w| w.intent.clone())
}
