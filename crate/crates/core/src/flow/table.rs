use std::collections::BTreeMap;

use crate::intent;
use crate::model::CompositeIntent;

#[derive(Debug, Clone, PartialEq)]
pub struct Weighted {
    pub intent: CompositeIntent,
    pub weight: f64,
}

impl Weighted {
    fn uniform(intents: Vec<CompositeIntent>) -> Vec<Weighted> {
        intents
            .into_iter()
            .map(|intent| Weighted { intent, weight: 1.0 })
            .collect()
    }
}

/// Successor distributions for both speakers.
///
/// `customer_transitions` is keyed by the agent's previous act (greeting
/// stripped) and `agent_transitions` by the customer's. Legality masks are
/// applied at sampling time, so a table entry lists every successor that can
/// ever follow its key.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolicyTable {
    pub opening: Vec<Weighted>,
    pub customer_transitions: BTreeMap<CompositeIntent, Vec<Weighted>>,
    pub agent_transitions: BTreeMap<CompositeIntent, Vec<Weighted>>,
}

impl Default for FlowPolicyTable {
    fn default() -> Self {
        Self::with_no_change_prob(0.25)
    }
}

impl FlowPolicyTable {
    /// Uniform customer successors; the agent holds its price instead of
    /// conceding with probability `no_change`.
    pub fn with_no_change_prob(no_change: f64) -> Self {
        let opening = Weighted::uniform(vec![
            intent!(Greet - Ask),
            intent!(Greet - AskClarification),
            intent!(Greet - NegotiatePriceDecrease),
            intent!(Greet - NegotiateAddX),
            intent!(Greet - NegotiateRemoveX),
        ]);

        let bargaining = || {
            Weighted::uniform(vec![
                intent!(NegotiatePriceDecrease),
                intent!(NegotiateAddX),
                intent!(NegotiateRemoveX),
            ])
        };
        let after_info = || {
            Weighted::uniform(vec![
                intent!(AskPrice),
                intent!(NegotiatePriceDecrease),
                intent!(NegotiateAddX),
                intent!(NegotiateRemoveX),
            ])
        };
        let mut customer_transitions = BTreeMap::new();
        customer_transitions.insert(intent!(Inform), after_info());
        customer_transitions.insert(intent!(ProvideClarification), after_info());
        customer_transitions.insert(
            intent!(TellPrice),
            bargaining(),
        );
        customer_transitions.insert(
            intent!(Inform - NegotiatePriceIncrease),
            bargaining(),
        );
        customer_transitions.insert(
            intent!(Inform - NegotiatePriceNoChange),
            bargaining(),
        );
        for key in [
            intent!(NegotiatePriceIncrease),
            intent!(NegotiatePriceNoChange),
            intent!(NegotiateAddX),
            intent!(NegotiateRemoveX),
        ] {
            customer_transitions.insert(key, bargaining());
        }

        let mut agent_transitions = BTreeMap::new();
        let one = |i: CompositeIntent| vec![Weighted { intent: i, weight: 1.0 }];
        agent_transitions.insert(intent!(Ask), one(intent!(Inform)));
        agent_transitions.insert(intent!(AskPrice), one(intent!(TellPrice)));
        agent_transitions.insert(
            intent!(AskClarification),
            one(intent!(ProvideClarification)),
        );
        agent_transitions.insert(intent!(NegotiateAddX), one(intent!(Inform)));
        agent_transitions.insert(intent!(NegotiateRemoveX), one(intent!(Inform)));
        agent_transitions.insert(intent!(Accept), one(intent!(Acknowledge)));
        agent_transitions.insert(
            intent!(NegotiatePriceDecrease),
            vec![
                Weighted {
                    intent: intent!(NegotiatePriceIncrease),
                    weight: 1.0 - no_change,
                },
                Weighted {
                    intent: intent!(NegotiatePriceNoChange),
                    weight: no_change,
                },
                // chosen by the seller's tolerance rule, never sampled
                Weighted {
                    intent: intent!(Accept),
                    weight: 0.0,
                },
            ],
        );

        FlowPolicyTable {
            opening,
            customer_transitions,
            agent_transitions,
        }
    }

    /// Weight of `successor` after `key` in the agent table, or 0.
    pub fn agent_weight(&self, key: &CompositeIntent, successor: &CompositeIntent) -> f64 {
        self.agent_transitions
            .get(key)
            .and_then(|s| s.iter().find(|w| &w.intent == successor))
            .map_or(0.0, |w| w.weight)
    }
}
