use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::examples::reference_dialogue;
use crate::flow::{generate_corpus, FlowConfig};
use crate::model::{Catalog, DialogueTurn, Outcome};
use crate::realize::TemplateLibrary;

fn ci(name: &str) -> CompositeIntent {
    CompositeIntent::parse(name).unwrap()
}

fn realized_pairs(n_pairs: usize, seed: u64) -> Vec<(String, CompositeIntent)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeletons =
        generate_corpus(&Catalog::builtin(), n_pairs / 8 + 50, &FlowConfig::default(), &mut rng)
            .unwrap();
    let lib = TemplateLibrary::builtin();
    let dialogues: Vec<Dialogue> = skeletons
        .iter()
        .map(|sk| lib.realize_skeleton(sk, &mut rng).unwrap())
        .collect();
    let mut pairs = labeled_utterances(&dialogues);
    assert!(pairs.len() >= n_pairs);
    pairs.truncate(n_pairs);
    pairs
}

fn trained() -> &'static (IntentClassifier, TrainReport, Vec<(String, CompositeIntent)>) {
    static CLF: OnceLock<(IntentClassifier, TrainReport, Vec<(String, CompositeIntent)>)> =
        OnceLock::new();
    CLF.get_or_init(|| {
        let pairs = realized_pairs(5000, 11);
        let cfg = ClassifierConfig {
            drop_rare: true,
            ..ClassifierConfig::default()
        };
        let (clf, report) = train_classifier(&pairs, &cfg).unwrap();
        (clf, report, pairs)
    })
}

// independent bag-of-words cosine over sorted token lists
fn oracle_cosine(a: &str, b: &str) -> f64 {
    let toks = |s: &str| -> Vec<String> {
        s.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(String::from)
            .collect()
    };
    let (ta, tb) = (toks(a), toks(b));
    let mut vocab: Vec<&String> = ta.iter().chain(&tb).collect();
    vocab.sort();
    vocab.dedup();
    let va: Vec<f64> = vocab.iter().map(|w| ta.iter().filter(|t| t == w).count() as f64).collect();
    let vb: Vec<f64> = vocab.iter().map(|w| tb.iter().filter(|t| t == w).count() as f64).collect();
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n(&va) == 0.0 || n(&vb) == 0.0 {
        0.0
    } else {
        dot / (n(&va) * n(&vb))
    }
}

#[test]
fn price_gap_examples() {
    assert!((r2_price_gap(Price(92800), Price(83300)).unwrap() - 0.8976).abs() < 1e-4);
    assert_eq!(r2_price_gap(Price(5000), Price(5000)).unwrap(), 1.0);
    assert!((r2_price_gap(Price(100), Price(90)).unwrap() - 0.9).abs() < 1e-12);
    assert!(matches!(
        r2_price_gap(Price::ZERO, Price(90)),
        Err(RewardError::ZeroInitialPrice)
    ));
}

#[test]
fn strategy_examples() {
    let r = r3_negotiation_strategy(Price(110), Price(100), FinalIntent::Accept).unwrap();
    assert!((r - 0.1f64.exp()).abs() < 1e-12);
    assert!((r - 1.10517).abs() < 1e-5);
    for fin in [FinalIntent::Accept, FinalIntent::Reject] {
        assert_eq!(r3_negotiation_strategy(Price(90), Price(100), fin).unwrap(), 0.0);
    }
    assert_eq!(
        r3_negotiation_strategy(Price(100), Price(100), FinalIntent::Reject).unwrap(),
        -1.0
    );
    assert!(matches!(
        r3_negotiation_strategy(Price(100), Price::ZERO, FinalIntent::Accept),
        Err(RewardError::ZeroMinPrice)
    ));
}

#[test]
fn interactiveness_examples() {
    let a = "I can offer the tablet for $83300";
    assert_eq!(r4_interactiveness(a, &[a]), 0.0);
    assert_eq!(r4_interactiveness(a, &["completely different words here"]), 1.0);
    let priors = [a, "nothing shared at all"];
    assert!((oracle_cosine(a, priors[0]) - 1.0).abs() < 1e-12);
    assert_eq!(oracle_cosine(a, priors[1]), 0.0);
    assert!((r4_interactiveness(a, &priors) - 0.5).abs() < 1e-12);
    assert_eq!(r4_interactiveness::<&str>(a, &[]), 1.0);
}

#[test]
fn cosine_matches_oracle() {
    let cases = [
        ("the tablet is great great", "great tablet for the price"),
        ("$91100 without the stylus", "Without the STYLUS it is 91100."),
        ("", "anything"),
    ];
    for (a, b) in cases {
        assert!((cosine(a, b) - oracle_cosine(a, b)).abs() < 1e-12, "{a} / {b}");
    }
}

#[test]
fn tokenizer_keeps_digits() {
    assert_eq!(
        tokenize("How about $74,700? OK!"),
        vec!["how", "about", "74", "700", "ok"]
    );
}

#[test]
fn combined_examples() {
    let w = RewardWeights::default();
    assert!((combined([1.0; 4], &w) - 0.9).abs() < 1e-12);
    let proj = RewardWeights::new([1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(combined([0.37, 5.0, -1.0, 0.2], &proj), 0.37);
    assert_eq!(combined([0.0; 4], &w), 0.0);
}

#[test]
fn weights_json_and_renormalize() {
    let w = RewardWeights::from_json(r#"{"gamma": [0.2, 0.2, 0.3, 0.2], "renormalize": true}"#)
        .unwrap();
    assert!((w.sum() - 0.9).abs() < 1e-12);
    assert!((combined([1.0; 4], &w) - 1.0).abs() < 1e-12);
    let back: RewardWeights = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
    assert_eq!(back, w);
    assert!(RewardWeights::from_json(r#"{"gamma": [0.2, -0.1, 0.3, 0.2]}"#).is_err());
    assert_eq!(RewardWeights::from_json("{}").unwrap(), RewardWeights::default());
}

#[test]
fn normalize_examples() {
    assert_eq!(normalize_batch(&[1.0, 3.0]), vec![-1.0, 1.0]);
    assert_eq!(normalize_batch(&[2.5; 4]), vec![0.0; 4]);
    let z = normalize_batch(&[0.3, -1.0, 2.0, 7.5, 0.0]);
    let mean = z.iter().sum::<f64>() / 5.0;
    let std = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
    assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
}

#[test]
fn classifier_heldout_accuracy() {
    let (clf, report, pairs) = trained();
    assert!(report.heldout_accuracy >= 0.90, "{report:?}");
    assert!(report.n_heldout > 500);
    let seen: std::collections::BTreeSet<_> = pairs.iter().map(|(_, y)| y.clone()).collect();
    for c in clf.classes() {
        assert!(seen.contains(c));
    }
}

#[test]
fn classifier_examples() {
    let (clf, _, pairs) = trained();
    let text = "Hello, I am interested in buying the refrigerator you have listed. How much can I get it for?";
    assert_eq!(clf.classify(text).0, ci("Greet-Ask"));

    let uniform = 1.0 / clf.classes().len() as f64;
    for c in clf.classes() {
        assert!((clf.prob("", c).unwrap() - uniform).abs() < 1e-12);
    }
    let (text, label) = &pairs[0];
    assert!(clf.prob(text, label).unwrap() > uniform);
    assert!(matches!(
        clf.prob("hi", &ci("Avoid-Rejection")),
        Err(RewardError::UnknownClass(_))
    ));
}

#[test]
fn single_class_is_insufficient() {
    let corpus: Vec<_> = (0..20).map(|i| (format!("hello {i}"), ci("Greet"))).collect();
    assert!(matches!(
        train_classifier(&corpus, &ClassifierConfig::default()),
        Err(RewardError::InsufficientData { .. })
    ));
    let mut few = corpus.clone();
    few.extend((0..3).map(|_| ("bye".to_string(), ci("Acknowledge"))));
    assert!(matches!(
        train_classifier(&few, &ClassifierConfig::default()),
        Err(RewardError::InsufficientData { .. })
    ));
}

#[test]
fn duplicate_examples_classify_perfectly() {
    let mut corpus: Vec<_> = (0..10).map(|_| ("hello there".to_string(), ci("Greet"))).collect();
    corpus.extend((0..10).map(|_| ("that works, deal".to_string(), ci("Accept"))));
    let (clf, report) = train_classifier(&corpus, &ClassifierConfig::default()).unwrap();
    assert_eq!(report.heldout_accuracy, 1.0);
    assert_eq!(clf.classify("hello there").0, ci("Greet"));
}

#[test]
fn classifier_is_deterministic_and_persists() {
    let pairs = realized_pairs(1500, 3);
    let cfg = ClassifierConfig {
        drop_rare: true,
        ..ClassifierConfig::default()
    };
    let (a, ra) = train_classifier(&pairs, &cfg).unwrap();
    let (b, rb) = train_classifier(&pairs, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clf.json");
    a.save(&path).unwrap();
    let back = IntentClassifier::load(&path).unwrap();
    for (t, _) in pairs.iter().take(50) {
        assert_eq!(back.predict_proba(t), a.predict_proba(t));
    }
    let raw: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    for key in ["vocabulary", "classes", "weights"] {
        assert!(raw.get(key).is_some());
    }
    assert!(IntentClassifier::from_json(r#"{"vocabulary": {}, "classes": ["Greet"], "weights": [[]]}"#).is_err());
}

#[test]
fn reference_dialogue_score() {
    let (clf, _, _) = trained();
    let d = reference_dialogue();
    let s = score_dialogue(&d, clf, &RewardWeights::default(), Price(80000)).unwrap();
    let agent_turns = d.turns.iter().filter(|t| t.speaker == Speaker::Agent).count();
    assert_eq!(s.turns.len(), agent_turns);
    let (last_idx, last) = s.turns.last().unwrap();
    assert_eq!(*last_idx, d.turns.len() - 1);
    assert!((last.r2.unwrap() - 0.8976).abs() < 1e-4);
    assert!(last.r3.unwrap() >= 0.0);
    for (_, b) in &s.turns[..s.turns.len() - 1] {
        assert!(b.r2.is_none() && b.r3.is_none());
    }
    for (_, b) in &s.turns {
        assert!((0.0..=1.0).contains(&b.r1) && (0.0..=1.0).contains(&b.r4));
        assert!((b.total - combined(b.components(), &RewardWeights::default())).abs() < 1e-12);
    }
    let mean = s.turns.iter().map(|(_, b)| b.total).sum::<f64>() / s.turns.len() as f64;
    assert!((s.total - mean).abs() < 1e-12);
}

fn turn(speaker: Speaker, intent: &str, text: &str, price: Option<u64>) -> DialogueTurn {
    DialogueTurn {
        speaker,
        intent: ci(intent),
        text: text.into(),
        price_offer: price.map(Price),
        bundle_ops: vec![],
    }
}

#[test]
fn repeated_agent_text_scores_zero_interactiveness() {
    let (clf, _, _) = trained();
    let mut d = reference_dialogue();
    let same = "I can do $85000 for the tablet, that is a fair price.";
    d.turns.truncate(2);
    d.turns.extend([
        turn(Speaker::Customer, "Negotiate-Price-Decrease", "How about $70000?", Some(70000)),
        turn(Speaker::Agent, "Negotiate-Price-Increase", same, Some(85000)),
        turn(Speaker::Customer, "Negotiate-Price-Decrease", "Still too much, $72000?", Some(72000)),
        turn(Speaker::Agent, "Negotiate-Price-Increase", same, Some(85000)),
        turn(Speaker::Customer, "Accept", "Fine, I'll take it.", None),
        turn(Speaker::Agent, "Acknowledge", "Thank you!", None),
    ]);
    d.outcome = Outcome::accepted(Price(85000));
    let s = score_dialogue(&d, clf, &RewardWeights::default(), Price(80000)).unwrap();
    let r4: Vec<f64> = s.turns.iter().map(|(_, b)| b.r4).collect();
    assert_eq!(r4, vec![1.0, 1.0, 0.0, 1.0]);
}

#[test]
fn rejection_below_reserve_scores_zero_strategy() {
    let (clf, _, _) = trained();
    let mut d = reference_dialogue();
    d.turns.truncate(6);
    d.turns.push(turn(Speaker::Customer, "Reject", "No thanks, that is too much.", None));
    d.outcome = Outcome::rejected();
    let s = score_dialogue(&d, clf, &RewardWeights::default(), Price(80000)).unwrap();
    let last = s.turns.last().unwrap().1;
    assert_eq!(last.r3, Some(0.0));
    assert_eq!(s.final_price, Price(83300));
}

#[test]
fn invalid_dialogue_is_rejected() {
    let (clf, _, _) = trained();
    let mut d = reference_dialogue();
    d.turns.swap(0, 1);
    assert!(matches!(
        score_dialogue(&d, clf, &RewardWeights::default(), Price(80000)),
        Err(RewardError::InvalidDialogue(v)) if !v.is_empty()
    ));
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "tablet", "price", "deal", "hello", "offer", "stylus", "card", "great", "1000", "the",
    ])
    .prop_map(String::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn r1_is_a_probability(text in "\\PC{0,80}") {
        let (clf, _, _) = trained();
        let p = clf.predict_proba(&text);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for c in clf.classes() {
            let r = r1_intent_consistency(clf, &text, c).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn argmax_ignores_unknown_tokens(
        idx in 0usize..5000,
        junk in prop::collection::vec(prop::sample::select(vec!["", " ", "!", "??", "...", ",", "zzqx", "\t"]), 1..6),
    ) {
        let (clf, _, pairs) = trained();
        let text = &pairs[idx].0;
        let padded = format!("{text} {}", junk.join(" "));
        prop_assert_eq!(clf.classify(text).0, clf.classify(&padded).0);
    }

    #[test]
    fn r4_symmetric_and_order_free(
        a in prop::collection::vec(word(), 0..12),
        b in prop::collection::vec(word(), 0..12),
    ) {
        let (sa, sb) = (a.join(" "), b.join(" "));
        let ab = r4_interactiveness(&sa, &[sb.as_str()]);
        prop_assert!((ab - r4_interactiveness(&sb, &[sa.as_str()])).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        let mut rev = a.clone();
        rev.reverse();
        prop_assert!((ab - r4_interactiveness(&rev.join(" "), &[sb.as_str()])).abs() < 1e-12);
        prop_assert!((cosine(&sa, &sb) - oracle_cosine(&sa, &sb)).abs() < 1e-12);
    }

    #[test]
    fn r3_sign(pb in 0u64..300_000, pmin in 1u64..300_000, accept in any::<bool>()) {
        let fin = if accept { FinalIntent::Accept } else { FinalIntent::Reject };
        let r = r3_negotiation_strategy(Price(pb), Price(pmin), fin).unwrap();
        if pb < pmin {
            prop_assert_eq!(r, 0.0);
        } else {
            prop_assert_eq!(r > 0.0, accept);
            prop_assert!(r.abs() >= 1.0);
        }
    }

    #[test]
    fn combined_is_linear(
        r in prop::array::uniform4(-3.0f64..3.0),
        s in prop::array::uniform4(-3.0f64..3.0),
        g in prop::array::uniform4(0.0f64..1.0),
        c in 0.0f64..5.0,
    ) {
        let w = RewardWeights::new(g).unwrap();
        let sum: [f64; 4] = std::array::from_fn(|i| r[i] + s[i]);
        prop_assert!((combined(sum, &w) - combined(r, &w) - combined(s, &w)).abs() < 1e-9);
        let scaled = RewardWeights::new(g.map(|x| x * c)).unwrap();
        prop_assert!((combined(r, &scaled) - c * combined(r, &w)).abs() < 1e-9);
    }

    #[test]
    fn normalized_batch_is_standard(xs in prop::collection::vec(-100.0f64..100.0, 2..40)) {
        let z = normalize_batch(&xs);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let std = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!(std.abs() < 1e-9 || (std - 1.0).abs() < 1e-9);
    }
}
