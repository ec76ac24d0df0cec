use std::collections::BTreeMap;

use rand::seq::IteratorRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{
    legal_moves, next_customer_intent, AgentChoice, AgentMove, AgentStrategy, AgentView,
    CustomerContext, DealSetup, FlowConfig, FlowError, Skeleton, SkeletonTurn,
};
use crate::concession::{buyer_counter, buyer_decision, capped_offer, seller_counter, BuyerDecision};
use crate::intent;
use crate::model::{
    Bundle, BundleOp, CompositeIntent, DealState, DealStatus, IntentAtom, Outcome, Price, Speaker,
};

/// A customer turn before it is applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomerAction {
    pub intent: CompositeIntent,
    #[serde(default)]
    pub offer: Option<Price>,
    #[serde(default)]
    pub op: Option<BundleOp>,
}

/// One decision taken by the agent, with what it saw.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    /// Deal state before the move.
    pub state: DealState,
    pub customer: CompositeIntent,
    pub offer: Option<Price>,
    pub legal: Vec<AgentMove>,
    pub choice: AgentChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub skeleton: Skeleton,
    pub steps: Vec<AgentStep>,
}

/// A live negotiation: deal state plus the turns so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Negotiation {
    pub id: String,
    pub initial_bundle: Bundle,
    pub setup: DealSetup,
    pub state: DealState,
    pub ceiling: Price,
    pub turns: Vec<SkeletonTurn>,
    pub outcome: Option<Outcome>,
    /// Budget verdict on the agent's latest asking price.
    pending: Option<BuyerDecision>,
}

impl Negotiation {
    pub fn new(
        bundle: Bundle,
        setup: DealSetup,
        config: &crate::model::NegotiationConfig,
    ) -> Result<Self, FlowError> {
        bundle.check()?;
        let state = DealState::open(bundle.clone(), config, setup.buyer_open, setup.seller_min)?;
        Ok(Negotiation {
            id: String::new(),
            initial_bundle: bundle,
            setup,
            state,
            ceiling: setup.ceiling,
            turns: Vec::new(),
            outcome: None,
            pending: None,
        })
    }

    /// Whether the last turn ended the dialogue.
    pub fn finished(&self) -> bool {
        self.turns.last().is_some_and(|t| {
            t.intent.contains(IntentAtom::Reject) || t.intent.contains(IntentAtom::Acknowledge)
        })
    }

    pub fn next_speaker(&self) -> Speaker {
        match self.turns.last() {
            Some(t) => t.speaker.other(),
            None => Speaker::Customer,
        }
    }

    /// The customer's standing offer, once one has been made.
    pub fn offer(&self) -> Option<Price> {
        (self.state.t >= 1).then_some(self.state.buyer_price)
    }

    pub fn pending_decision(&self) -> Option<BuyerDecision> {
        self.pending
    }

    /// Fills in the offer and bundle op a simulated customer attaches to
    /// `intent`.
    pub fn plan_customer<R: Rng + ?Sized>(
        &self,
        intent: CompositeIntent,
        rng: &mut R,
    ) -> Result<CustomerAction, FlowError> {
        let offer = if intent.contains(IntentAtom::NegotiatePriceDecrease) {
            Some(self.simulated_offer()?)
        } else {
            None
        };
        let op = pick_op(&intent, &self.state.bundle, rng);
        Ok(CustomerAction { intent, offer, op })
    }

    fn simulated_offer(&self) -> Result<Price, FlowError> {
        if self.state.t == 0 {
            return Ok(self.state.buyer_price.min(self.state.seller_price));
        }
        let mut next = self.state.clone();
        next.t += 1;
        let counter = buyer_counter(&next)?;
        Ok(capped_offer(counter, self.state.buyer_price, self.ceiling))
    }

    /// Applies a customer turn.
    pub fn customer_turn(&mut self, action: CustomerAction) -> Result<&SkeletonTurn, FlowError> {
        if self.next_speaker() != Speaker::Customer || self.finished() {
            return Err(FlowError::InvalidTurn("not the customer's turn".into()));
        }
        let agent_accepted = self
            .turns
            .last()
            .is_some_and(|t| t.intent.contains(IntentAtom::Accept));
        let intent = action.intent;
        if agent_accepted {
            if intent != intent!(Acknowledge) {
                return Err(FlowError::InvalidTurn(
                    "an accepted deal can only be acknowledged".into(),
                ));
            }
        } else if !self.state.is_open() {
            return Err(FlowError::ClosedDeal);
        } else if intent.contains(IntentAtom::Acknowledge) {
            return Err(FlowError::InvalidTurn("nothing to acknowledge".into()));
        }
        if self.turns.is_empty() && !intent.contains(IntentAtom::Greet) {
            return Err(FlowError::InvalidTurn("the customer opens with a greeting".into()));
        }

        let mut slots = self.base_slots();
        let mut price_offer = None;
        let mut ops = Vec::new();

        if intent.contains(IntentAtom::NegotiatePriceDecrease) {
            let offer = action
                .offer
                .ok_or_else(|| FlowError::InvalidTurn("a price offer needs an amount".into()))?;
            if offer == Price::ZERO || offer > self.state.seller_price {
                return Err(FlowError::InvalidTurn(format!(
                    "offer {offer} must be positive and at most the asking price {}",
                    self.state.seller_price
                )));
            }
            self.state.t += 1;
            self.state.buyer_price = offer;
            price_offer = Some(offer);
            slots.insert("offer".into(), offer.to_string());
            slots.insert("price".into(), offer.to_string());
        }
        if intent.has_bundle_op() {
            let op = action
                .op
                .ok_or_else(|| FlowError::InvalidTurn("a bundle move needs an item".into()))?;
            check_op_matches(&intent, &op)?;
            let (item, change) = self.reprice(&op)?;
            slots.insert("item".into(), item);
            slots.insert("change".into(), change);
            slots.insert("items".into(), self.item_names());
            ops.push(op);
        }
        if intent.contains(IntentAtom::Accept) {
            let price = self.state.seller_price;
            self.state.close(DealStatus::Accepted);
            self.outcome = Some(Outcome::accepted(price));
            slots.insert("price".into(), price.to_string());
        }
        if intent.contains(IntentAtom::Reject) {
            self.state.close(DealStatus::Rejected);
            self.outcome = Some(Outcome::rejected());
        }
        self.pending = None;
        self.turns.push(SkeletonTurn {
            speaker: Speaker::Customer,
            intent,
            price_offer,
            bundle_ops: ops,
            info_slots: slots,
        });
        Ok(self.turns.last().expect("just pushed"))
    }

    /// Moves the agent may make now.
    pub fn legal_agent_moves(&self) -> Result<Vec<AgentMove>, FlowError> {
        let customer = self.awaiting_agent()?;
        if customer.contains(IntentAtom::Accept) {
            return Ok(vec![AgentMove::Acknowledge]);
        }
        legal_moves(customer, &self.state)
    }

    fn awaiting_agent(&self) -> Result<&CompositeIntent, FlowError> {
        match self.turns.last() {
            Some(t) if t.speaker == Speaker::Customer && !self.finished() => Ok(&t.intent),
            _ => Err(FlowError::InvalidTurn("not the agent's turn".into())),
        }
    }

    /// Lets `strategy` pick a move and applies it.
    pub fn agent_turn(
        &mut self,
        strategy: &mut dyn AgentStrategy,
        rng: &mut dyn RngCore,
    ) -> Result<AgentStep, FlowError> {
        let legal = self.legal_agent_moves()?;
        let customer = self.awaiting_agent()?.clone();
        let offer = self.offer();
        let choice = strategy.choose(
            &AgentView {
                state: &self.state,
                customer: &customer,
                offer,
                legal: &legal,
                history: &self.turns,
            },
            rng,
        )?;
        if !legal.contains(&choice.mv) {
            return Err(FlowError::IllegalMove(choice.mv));
        }
        let step = AgentStep {
            state: self.state.clone(),
            customer: customer.clone(),
            offer,
            legal,
            choice,
        };
        self.apply_agent(choice.mv, &customer, &mut *rng)?;
        Ok(step)
    }

    fn apply_agent(
        &mut self,
        mv: AgentMove,
        customer: &CompositeIntent,
        rng: &mut dyn RngCore,
    ) -> Result<(), FlowError> {
        let intent = mv.intent_for(customer);
        let mut slots = self.base_slots();
        let mut price_offer = None;
        let mut ops = Vec::new();
        let previous = self.state.seller_price;
        let mut quoted = None;

        match mv {
            AgentMove::Acknowledge | AgentMove::ProvideClarification => {}
            AgentMove::Inform => {
                if let Some(last) = self.turns.last().filter(|t| !t.bundle_ops.is_empty()) {
                    for key in ["item", "change"] {
                        if let Some(v) = last.info_slots.get(key) {
                            slots.insert(key.into(), v.clone());
                        }
                    }
                    quoted = Some(self.state.seller_price);
                }
            }
            AgentMove::TellPrice => quoted = Some(self.state.seller_price),
            AgentMove::HoldPrice => {
                quoted = Some(self.state.seller_price);
            }
            AgentMove::ConcedeFull | AgentMove::ConcedeSmall => {
                let full = seller_counter(&self.state)?;
                let asking = if mv == AgentMove::ConcedeFull {
                    full
                } else {
                    let step = previous.saturating_sub(full).as_f64() / 2.0;
                    previous.saturating_sub(Price::round_half_up(step))
                };
                quoted = Some(asking);
            }
            AgentMove::Accept => {
                let price = self.state.buyer_price;
                self.state.close(DealStatus::Accepted);
                self.outcome = Some(Outcome::accepted(price));
                slots.insert("price".into(), price.to_string());
            }
            AgentMove::Reject => {
                self.state.close(DealStatus::Rejected);
                self.outcome = Some(Outcome::rejected());
            }
            AgentMove::ProposeAdd | AgentMove::ProposeRemove => {
                let op = pick_op(&intent, &self.state.bundle, rng)
                    .ok_or(FlowError::IllegalMove(mv))?;
                let (item, change) = self.reprice(&op)?;
                slots.insert("item".into(), item);
                slots.insert("change".into(), change);
                slots.insert("items".into(), self.item_names());
                ops.push(op);
                quoted = Some(self.state.seller_price);
            }
        }

        self.pending = None;
        if let Some(asking) = quoted {
            self.pending = Some(buyer_decision(&self.state, asking, self.ceiling)?);
            if mv.is_price_only() {
                self.state.price_rounds_used += 1;
            }
            self.state.seller_price = asking;
            price_offer = Some(asking);
            slots.insert("price".into(), asking.to_string());
            slots.insert("asking".into(), asking.to_string());
            slots.insert("previous_price".into(), previous.to_string());
        }
        self.turns.push(SkeletonTurn {
            speaker: Speaker::Agent,
            intent,
            price_offer,
            bundle_ops: ops,
            info_slots: slots,
        });
        Ok(())
    }

    /// Applies a bundle op and re-prices the deal. Returns the `item` and
    /// `change` slot values.
    fn reprice(&mut self, op: &BundleOp) -> Result<(String, String), FlowError> {
        let next = self.state.bundle.apply(op)?;
        let item = next
            .item(op.item_id())
            .expect("applied op names a bundle item");
        let name = item.name.clone();
        let old_list = self.state.bundle.price();
        let new_list = next.price();
        let ratio = new_list.as_f64() / old_list.as_f64();
        let asking = match op {
            BundleOp::Add(_) => self.state.seller_price + item.unit_price,
            BundleOp::Remove(_) => self.state.seller_price.saturating_sub(item.unit_price),
        }
        .max(Price(1));
        self.state.seller_price = asking;
        self.state.seller_min = self.state.seller_min.scale(ratio).min(asking);
        self.state.buyer_price = self.state.buyer_price.scale(ratio).max(Price(1)).min(asking);
        self.ceiling = self.ceiling.scale(ratio);
        self.state.price_rounds_used = 0;
        self.state.bundle = next;
        let change = match op {
            BundleOp::Add(_) => format!("with the {name}"),
            BundleOp::Remove(_) => format!("without the {name}"),
        };
        Ok((name, change))
    }

    fn item_names(&self) -> String {
        self.state
            .bundle
            .active_items()
            .map(|p| p.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    fn base_slots(&self) -> BTreeMap<String, String> {
        let main = self.state.bundle.main();
        let mut slots = BTreeMap::new();
        slots.insert("product".into(), main.name.clone());
        slots.insert("items".into(), self.item_names());
        slots.insert("asking".into(), self.state.seller_price.to_string());
        if let Some(offer) = self.offer() {
            slots.insert("offer".into(), offer.to_string());
        }
        // a clarification answer repeats the feature the customer asked about
        let asked = self
            .turns
            .iter()
            .filter(|t| t.speaker == Speaker::Customer && t.intent.contains(IntentAtom::AskClarification))
            .count();
        let idx = match self.next_speaker() {
            Speaker::Customer => asked,
            Speaker::Agent => asked.saturating_sub(1),
        };
        if !main.features.is_empty() {
            slots.insert("feature".into(), main.features[idx % main.features.len()].clone());
        }
        slots
    }

    /// The dialogue so far as a skeleton. Open dialogues get a rejected
    /// outcome placeholder.
    pub fn skeleton(&self) -> Skeleton {
        Skeleton {
            id: self.id.clone(),
            bundle: self.initial_bundle.clone(),
            setup: self.setup,
            turns: self.turns.clone(),
            outcome: self.outcome.unwrap_or_else(Outcome::rejected),
        }
    }
}

fn check_op_matches(intent: &CompositeIntent, op: &BundleOp) -> Result<(), FlowError> {
    let ok = match op {
        BundleOp::Add(_) => intent.contains(IntentAtom::NegotiateAddX),
        BundleOp::Remove(_) => intent.contains(IntentAtom::NegotiateRemoveX),
    };
    if ok {
        Ok(())
    } else {
        Err(FlowError::InvalidTurn(format!("{intent} does not match the bundle op")))
    }
}

/// A random op for the intent's bundle act: remove an active accessory or
/// add an inactive one.
fn pick_op<R: Rng + ?Sized>(
    intent: &CompositeIntent,
    bundle: &Bundle,
    rng: &mut R,
) -> Option<BundleOp> {
    if intent.contains(IntentAtom::NegotiateRemoveX) {
        bundle
            .removable()
            .choose(rng)
            .map(|p| BundleOp::Remove(p.id.clone()))
    } else if intent.contains(IntentAtom::NegotiateAddX) {
        bundle
            .addable()
            .choose(rng)
            .map(|p| BundleOp::Add(p.id.clone()))
    } else {
        None
    }
}

/// Plays a full negotiation between the simulated customer and `agent`.
pub fn run_flow(
    bundle: &Bundle,
    setup: DealSetup,
    config: &FlowConfig,
    agent: &mut dyn AgentStrategy,
    rng: &mut dyn RngCore,
) -> Result<FlowRecord, FlowError> {
    let mut neg = Negotiation::new(bundle.clone(), setup, &config.negotiation)?;
    let table = config.table();
    let cap = config.max_dialogue_turns.max(4);
    let mut steps = Vec::new();
    while !neg.finished() {
        let must_ack = neg
            .turns
            .last()
            .is_some_and(|t| t.intent.contains(IntentAtom::Accept));
        let intent = if !must_ack && neg.turns.len() + 2 >= cap {
            intent!(Reject)
        } else {
            next_customer_intent(
                &CustomerContext {
                    state: &neg.state,
                    history: &neg.turns,
                    decision: neg.pending,
                    table: &table,
                    clarification_prob: config.buyer.clarification_prob,
                },
                &mut *rng,
            )?
        };
        let action = neg.plan_customer(intent, &mut *rng)?;
        neg.customer_turn(action)?;
        if neg.finished() {
            break;
        }
        steps.push(neg.agent_turn(agent, &mut *rng)?);
    }
    Ok(FlowRecord {
        skeleton: neg.skeleton(),
        steps,
    })
}
