use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::concession::BuyerDecision;
use crate::examples::reference_dialogue;
use crate::intent;
use crate::model::{validate_dialogue, IntentAtom, OutcomeStatus};

fn corpus(n: usize, seed: u64) -> Vec<Skeleton> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_corpus(&Catalog::builtin(), n, &FlowConfig::default(), &mut rng).unwrap()
}

fn tablet_negotiation() -> Negotiation {
    let bundle = reference_dialogue().bundle;
    let setup = DealSetup {
        list_price: Price(92800),
        buyer_open: Price(74700),
        seller_min: Price(76000),
        ceiling: Price(85905),
    };
    Negotiation::new(bundle, setup, &NegotiationConfig::default()).unwrap()
}

/// Structural checks beyond `validate_dialogue`.
fn check_skeleton(sk: &Skeleton, d: u32) {
    let violations = validate_dialogue(&sk.as_dialogue());
    assert!(violations.is_empty(), "{}: {violations:?}", sk.id);
    assert_eq!(sk.turns[0].speaker, Speaker::Customer);
    assert!(sk.turns[0].intent.contains(IntentAtom::Greet));

    let mut price_rounds = 0;
    let mut offer: Option<Price> = None;
    let mut asking: Option<Price> = None;
    for turn in &sk.turns {
        if !turn.bundle_ops.is_empty() {
            price_rounds = 0;
            offer = None;
            asking = turn.price_offer;
            continue;
        }
        match turn.speaker {
            Speaker::Customer if turn.intent.contains(IntentAtom::NegotiatePriceDecrease) => {
                let p = turn.price_offer.unwrap();
                if let Some(prev) = offer {
                    assert!(p >= prev, "{}: customer walked back {prev} -> {p}", sk.id);
                }
                if let Some(a) = asking {
                    assert!(p <= a, "{}: offer {p} above asking {a}", sk.id);
                }
                offer = Some(p);
            }
            Speaker::Agent
                if turn.intent.contains(IntentAtom::NegotiatePriceIncrease)
                    || turn.intent.contains(IntentAtom::NegotiatePriceNoChange) =>
            {
                price_rounds += 1;
                assert!(price_rounds <= d, "{}: more than {d} price rounds", sk.id);
                let p = turn.price_offer.unwrap();
                if let Some(prev) = asking {
                    assert!(p <= prev, "{}: asking rose {prev} -> {p}", sk.id);
                }
                if let Some(o) = offer {
                    assert!(p >= o, "{}: asking {p} below offer {o}", sk.id);
                }
                asking = Some(p);
            }
            Speaker::Agent if turn.price_offer.is_some() => asking = turn.price_offer,
            _ => {}
        }
    }
}

#[test]
fn thousand_skeletons_are_well_formed() {
    for sk in corpus(1000, 42) {
        check_skeleton(&sk, 2);
    }
}

#[test]
fn every_core_atom_occurs_in_thousand_skeletons() {
    let seen: BTreeSet<IntentAtom> = corpus(1000, 42)
        .iter()
        .flat_map(|s| s.turns.iter().flat_map(|t| t.intent.atoms().to_vec()))
        .collect();
    for atom in IntentAtom::CORE {
        assert!(seen.contains(&atom), "{atom} never generated");
    }
}

#[test]
fn mean_turns_near_thirteen() {
    let sks = corpus(1000, 42);
    let mean = sks.iter().map(|s| s.turns.len()).sum::<usize>() as f64 / sks.len() as f64;
    assert!((9.0..=17.0).contains(&mean), "mean turns {mean}");
}

#[test]
fn seed_42_skeleton_shape() {
    let bundle = Catalog::builtin().bundle("tablet").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let sk = generate_skeleton(&bundle, &FlowConfig::default(), &mut rng).unwrap();
    assert!(sk.turns.len() >= 4);
    assert!(sk.turns[0].intent.contains(IntentAtom::Greet));
    let last = &sk.turns.last().unwrap().intent;
    assert!(last.contains(IntentAtom::Acknowledge) || last.contains(IntentAtom::Reject));
}

#[test]
fn unbridgeable_prices_end_in_rejection() {
    let bundle = Catalog::builtin().bundle("tablet").unwrap();
    let config = FlowConfig::with_negotiation(NegotiationConfig {
        max_turns: 4,
        ..NegotiationConfig::default()
    });
    let setup = DealSetup {
        list_price: bundle.price(),
        buyer_open: Price(40000),
        seller_min: Price(90000),
        ceiling: Price(46000),
    };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rec = run_flow(&bundle, setup, &config, &mut RuleAgent::default(), &mut rng).unwrap();
        assert_eq!(rec.skeleton.outcome.status, OutcomeStatus::Rejected);
        check_skeleton(&rec.skeleton, 2);
    }
}

#[test]
fn corpus_is_deterministic() {
    assert_eq!(corpus(50, 7), corpus(50, 7));
    assert_ne!(corpus(50, 7), corpus(50, 8));
}

#[test]
fn single_skeleton_corpus() {
    let sks = corpus(1, 3);
    assert_eq!(sks.len(), 1);
    check_skeleton(&sks[0], 2);
}

#[test]
fn corpus_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let empty = Catalog { products: vec![] };
    assert!(matches!(
        generate_corpus(&empty, 5, &FlowConfig::default(), &mut rng),
        Err(FlowError::EmptyCatalog)
    ));
    assert!(matches!(
        generate_corpus(&Catalog::builtin(), 0, &FlowConfig::default(), &mut rng),
        Err(FlowError::EmptyRequest)
    ));
}

#[test]
fn customer_opens_with_greeting() {
    let neg = tablet_negotiation();
    let table = FlowPolicyTable::default();
    let allowed = [
        intent!(Greet - Ask),
        intent!(Greet - AskClarification),
        intent!(Greet - NegotiatePriceDecrease),
        intent!(Greet - NegotiateAddX),
        intent!(Greet - NegotiateRemoveX),
    ];
    let mut seen = BTreeSet::new();
    for seed in 0..200 {
        let ctx = CustomerContext {
            state: &neg.state,
            history: &[],
            decision: None,
            table: &table,
            clarification_prob: 0.2,
        };
        let ci = next_customer_intent(&ctx, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert!(allowed.contains(&ci), "{ci}");
        seen.insert(ci);
    }
    assert!(seen.contains(&intent!(Greet - Ask)));
}

#[test]
fn price_intents_masked_after_d_rounds() {
    let mut state = tablet_negotiation().state;
    state.price_rounds_used = 2;
    state.t = 2;
    let table = FlowPolicyTable::default();
    let history = [SkeletonTurn {
        speaker: Speaker::Agent,
        intent: intent!(NegotiatePriceIncrease),
        price_offer: Some(Price(88000)),
        bundle_ops: vec![],
        info_slots: Default::default(),
    }];
    for seed in 0..200 {
        let ctx = CustomerContext {
            state: &state,
            history: &history,
            decision: Some(BuyerDecision::Counter),
            table: &table,
            clarification_prob: 0.2,
        };
        let ci = next_customer_intent(&ctx, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert!(!ci.contains(IntentAtom::NegotiatePriceDecrease), "{ci}");
    }
}

#[test]
fn budget_decision_dominates_sampling() {
    let state = tablet_negotiation().state;
    let table = FlowPolicyTable::default();
    let history = [SkeletonTurn {
        speaker: Speaker::Agent,
        intent: intent!(TellPrice),
        price_offer: Some(Price(80000)),
        bundle_ops: vec![],
        info_slots: Default::default(),
    }];
    for (decision, want) in [
        (BuyerDecision::AcceptDeal, intent!(Accept)),
        (BuyerDecision::RejectDeal, intent!(Reject)),
    ] {
        let ctx = CustomerContext {
            state: &state,
            history: &history,
            decision: Some(decision),
            table: &table,
            clarification_prob: 1.0,
        };
        let ci = next_customer_intent(&ctx, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(ci, want);
    }
}

#[test]
fn closed_deal_is_an_error() {
    let mut state = tablet_negotiation().state;
    state.close(crate::model::DealStatus::Rejected);
    let table = FlowPolicyTable::default();
    let ctx = CustomerContext {
        state: &state,
        history: &[],
        decision: None,
        table: &table,
        clarification_prob: 0.2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(next_customer_intent(&ctx, &mut rng), Err(FlowError::ClosedDeal)));
    assert!(matches!(
        next_agent_intent(&state, &intent!(Ask), &table, &mut rng),
        Err(FlowError::ClosedDeal)
    ));
}

#[test]
fn agent_greets_back() {
    let state = tablet_negotiation().state;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ci = next_agent_intent(&state, &intent!(Greet - Ask), &FlowPolicyTable::default(), &mut rng)
        .unwrap();
    assert_eq!(ci, intent!(Greet - Inform));
}

#[test]
fn agent_accepts_offer_within_tolerance() {
    let mut state = tablet_negotiation().state;
    state.t = 1;
    state.buyer_price = Price(89000); // 92800 * 0.95 = 88160
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ci = next_agent_intent(
        &state,
        &intent!(NegotiatePriceDecrease),
        &FlowPolicyTable::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(ci, intent!(Accept));
}

#[test]
fn agent_counters_outside_tolerance() {
    let mut state = tablet_negotiation().state;
    state.t = 1;
    let mut seen = BTreeSet::new();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seen.insert(
            next_agent_intent(
                &state,
                &intent!(NegotiatePriceDecrease),
                &FlowPolicyTable::default(),
                &mut rng,
            )
            .unwrap(),
        );
    }
    let want: BTreeSet<_> = [intent!(NegotiatePriceIncrease), intent!(NegotiatePriceNoChange)].into();
    assert_eq!(seen, want);
}

#[test]
fn removing_stylus_reprices_to_91100() {
    let mut neg = tablet_negotiation();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    neg.customer_turn(CustomerAction {
        intent: intent!(Greet - Ask),
        offer: None,
        op: None,
    })
    .unwrap();
    neg.agent_turn(&mut RuleAgent::default(), &mut rng).unwrap();
    neg.customer_turn(CustomerAction {
        intent: intent!(NegotiateRemoveX),
        offer: None,
        op: Some(BundleOp::Remove("stylus".into())),
    })
    .unwrap();
    let step = neg.agent_turn(&mut RuleAgent::default(), &mut rng).unwrap();
    assert_eq!(step.choice.mv, AgentMove::Inform);
    let turn = neg.turns.last().unwrap();
    assert_eq!(turn.intent, intent!(Inform));
    assert_eq!(turn.price_offer, Some(Price(91100)));
    assert_eq!(neg.state.price_rounds_used, 0);
}

#[test]
fn reprice_scales_hidden_prices() {
    let mut neg = tablet_negotiation();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    neg.customer_turn(CustomerAction {
        intent: intent!(Greet - NegotiateRemoveX),
        offer: None,
        op: Some(BundleOp::Remove("card".into())),
    })
    .unwrap();
    neg.agent_turn(&mut RuleAgent::default(), &mut rng).unwrap();
    let ratio = 82700.0 / 92800.0;
    assert_eq!(neg.state.seller_price, Price(82700));
    assert_eq!(neg.state.seller_min, Price(76000).scale(ratio));
    assert_eq!(neg.state.buyer_price, Price(74700).scale(ratio));
    assert_eq!(neg.ceiling, Price(85905).scale(ratio));
}

#[test]
fn structured_turns_are_checked() {
    let mut neg = tablet_negotiation();
    let bad_open = neg.customer_turn(CustomerAction {
        intent: intent!(Ask),
        offer: None,
        op: None,
    });
    assert!(matches!(bad_open, Err(FlowError::InvalidTurn(_))));
    let no_amount = neg.customer_turn(CustomerAction {
        intent: intent!(Greet - NegotiatePriceDecrease),
        offer: None,
        op: None,
    });
    assert!(matches!(no_amount, Err(FlowError::InvalidTurn(_))));
    let too_high = neg.customer_turn(CustomerAction {
        intent: intent!(Greet - NegotiatePriceDecrease),
        offer: Some(Price(99000)),
        op: None,
    });
    assert!(matches!(too_high, Err(FlowError::InvalidTurn(_))));
    let wrong_op = neg.customer_turn(CustomerAction {
        intent: intent!(Greet - NegotiateAddX),
        offer: None,
        op: Some(BundleOp::Remove("card".into())),
    });
    assert!(matches!(wrong_op, Err(FlowError::InvalidTurn(_))));
    assert!(neg.turns.is_empty());
}

struct Stubborn;

impl AgentStrategy for Stubborn {
    fn choose(
        &mut self,
        _: &AgentView<'_>,
        _: &mut dyn rand::RngCore,
    ) -> Result<AgentChoice, FlowError> {
        Ok(AgentChoice {
            mv: AgentMove::Reject,
            log_prob: None,
        })
    }
}

#[test]
fn illegal_agent_move_is_refused() {
    let mut neg = tablet_negotiation();
    neg.customer_turn(CustomerAction {
        intent: intent!(Greet - Ask),
        offer: None,
        op: None,
    })
    .unwrap();
    let err = neg
        .agent_turn(&mut Stubborn, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap_err();
    assert!(matches!(err, FlowError::IllegalMove(AgentMove::Reject)));
}

#[test]
fn agent_reject_ends_the_dialogue() {
    let bundle = Catalog::builtin().bundle("tv").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = FlowConfig::default();
    let setup = sample_setup(&bundle, &config, &mut rng);
    // Stubborn is only legal once a price is on the table; keep trying seeds
    // until the opening is a price offer.
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(rec) = run_flow(&bundle, setup, &config, &mut Stubborn, &mut rng) {
            assert_eq!(rec.skeleton.outcome.status, OutcomeStatus::Rejected);
            assert!(validate_dialogue(&rec.skeleton.as_dialogue()).is_empty());
            return;
        }
    }
    panic!("no seed opened with a price offer");
}

#[test]
fn dialogue_cap_forces_walkaway() {
    let bundle = Catalog::builtin().bundle("tablet").unwrap();
    let config = FlowConfig {
        max_dialogue_turns: 6,
        buyer: BuyerProfile {
            clarification_prob: 1.0,
            ..BuyerProfile::default()
        },
        ..FlowConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let setup = sample_setup(&bundle, &config, &mut rng);
    let rec = run_flow(&bundle, setup, &config, &mut RuleAgent::default(), &mut rng).unwrap();
    assert!(rec.skeleton.turns.len() <= 6);
    assert!(validate_dialogue(&rec.skeleton.as_dialogue()).is_empty());
}

#[test]
fn flow_config_json_round_trip() {
    let config = FlowConfig::default();
    let json = serde_json::to_string(&config).unwrap();
    let back: FlowConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, config);
    let partial: FlowConfig = serde_json::from_str(r#"{"max_dialogue_turns": 40}"#).unwrap();
    assert_eq!(partial.max_dialogue_turns, 40);
    assert_eq!(partial.negotiation, NegotiationConfig::default());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_skeletons_hold_invariants(seed in any::<u64>(), d in 1u32..4, k_s in 0.1f64..1.5, k_b in 0.1f64..1.5) {
        let config = FlowConfig::with_negotiation(NegotiationConfig {
            d,
            k_seller: k_s,
            k_buyer: k_b,
            ..NegotiationConfig::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for sk in generate_corpus(&Catalog::builtin(), 8, &config, &mut rng).unwrap() {
            check_skeleton(&sk, d);
        }
    }
}
