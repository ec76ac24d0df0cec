//! Self-play episodes, concession-rate sweeps and corpus statistics.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concession::{price_trace, ConcessionError, TraceTerminal};
use crate::flow::{
    derive_seeds, generate_corpus, run_flow, sample_setup, AgentStrategy, DealSetup, FlowConfig,
    FlowError, FlowRecord,
};
use crate::model::{Bundle, Catalog, CompositeIntent, Dialogue, OutcomeStatus, Price, Speaker};
use crate::realize::{RealizeError, TemplateLibrary};
use crate::reward::{
    labeled_utterances, score_dialogue, tokenize, train_classifier, ClassifierConfig,
    DialogueScore, IntentClassifier, RewardError, RewardWeights, TrainReport,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Realize(#[from] RealizeError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Concession(#[from] ConcessionError),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("bad sweep: {0}")]
    BadSweep(String),
}

/// Everything an episode needs besides the agent.
#[derive(Debug, Clone)]
pub struct SimEnv {
    pub bundles: Vec<Bundle>,
    pub flow: FlowConfig,
    pub templates: TemplateLibrary,
    pub classifier: IntentClassifier,
    pub weights: RewardWeights,
}

/// Pairs from rule-based dialogues realized with templates.
pub fn training_pairs(
    catalog: &Catalog,
    flow: &FlowConfig,
    templates: &TemplateLibrary,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(String, CompositeIntent)>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    while pairs.len() < n_pairs {
        let need = (n_pairs - pairs.len()) / 8 + 10;
        let skeletons = generate_corpus(catalog, need, flow, &mut rng)?;
        let dialogues = skeletons
            .iter()
            .map(|sk| templates.realize_skeleton(sk, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        pairs.extend(labeled_utterances(&dialogues));
    }
    pairs.truncate(n_pairs);
    Ok(pairs)
}

impl SimEnv {
    /// Builtin templates and a classifier trained on 5000 realized pairs.
    pub fn standard(
        catalog: &Catalog,
        flow: FlowConfig,
        weights: RewardWeights,
        seed: u64,
    ) -> Result<(Self, TrainReport), SimError> {
        let templates = TemplateLibrary::builtin();
        let pairs = training_pairs(catalog, &flow, &templates, 5000, seed)?;
        let cfg = ClassifierConfig {
            seed,
            drop_rare: true,
            ..ClassifierConfig::default()
        };
        let (classifier, report) = train_classifier(&pairs, &cfg)?;
        if catalog.bundles().is_empty() {
            return Err(FlowError::EmptyCatalog.into());
        }
        Ok((
            SimEnv {
                bundles: catalog.bundles(),
                flow,
                templates,
                classifier,
                weights,
            },
            report,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub accepted: bool,
    pub final_price: Option<Price>,
    pub turns: usize,
    pub buyer_utility: f64,
    pub seller_utility: f64,
    pub episode_reward: f64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub record: FlowRecord,
    pub dialogue: Dialogue,
    pub score: DialogueScore,
    pub metrics: EpisodeMetrics,
}

/// Splits the opening gap: the buyer's share is how far the final price
/// fell from the seller's opening, the seller's how far it rose above the
/// buyer's. Clamped so the shares stay in [0, 1] and sum to 1.
pub fn surplus_split(seller_open: f64, buyer_open: f64, final_price: f64) -> (f64, f64) {
    let span = seller_open - buyer_open;
    if span <= 0.0 {
        return (0.5, 0.5);
    }
    let seller = ((final_price - buyer_open) / span).clamp(0.0, 1.0);
    (1.0 - seller, seller)
}

/// Utilities of an outcome; openings are rescaled to the final bundle.
fn utilities(setup: &DealSetup, final_list: Price, final_price: Option<Price>) -> (f64, f64) {
    let Some(p) = final_price else {
        return (0.0, 0.0);
    };
    let ratio = final_list.as_f64() / setup.list_price.as_f64();
    surplus_split(
        setup.list_price.as_f64() * ratio,
        setup.buyer_open.as_f64() * ratio,
        p.as_f64(),
    )
}

/// One self-play negotiation, realized and scored.
pub fn run_episode(
    agent: &mut dyn AgentStrategy,
    env: &SimEnv,
    bundle: &Bundle,
    rng: &mut dyn RngCore,
) -> Result<Episode, SimError> {
    let setup = sample_setup(bundle, &env.flow, &mut *rng);
    let record = run_flow(bundle, setup, &env.flow, agent, &mut *rng)?;
    let dialogue = env.templates.realize_skeleton(&record.skeleton, &mut *rng)?;
    // reserve as it stood for the final bundle
    let seller_min = record
        .steps
        .last()
        .map(|s| s.state.seller_min)
        .unwrap_or(setup.seller_min)
        .max(Price(1));
    let score = score_dialogue(&dialogue, &env.classifier, &env.weights, seller_min)?;

    let final_list = final_bundle(&record).price();
    let accepted = dialogue.outcome.status == OutcomeStatus::Accepted;
    let final_price = dialogue.outcome.final_price.filter(|_| accepted);
    let (buyer_utility, seller_utility) = utilities(&setup, final_list, final_price);
    let metrics = EpisodeMetrics {
        accepted,
        final_price,
        turns: dialogue.turns.len(),
        buyer_utility,
        seller_utility,
        episode_reward: score.total,
    };
    Ok(Episode {
        record,
        dialogue,
        score,
        metrics,
    })
}

fn final_bundle(record: &FlowRecord) -> Bundle {
    let mut bundle = record.skeleton.bundle.clone();
    for op in record.skeleton.turns.iter().flat_map(|t| &t.bundle_ops) {
        if let Ok(next) = bundle.apply(op) {
            bundle = next;
        }
    }
    bundle
}

/// Runs `n` episodes in parallel, one independent stream per episode
/// derived from `seed`. `make_agent` builds a fresh agent per episode.
pub fn run_episodes<A, F>(
    env: &SimEnv,
    n: usize,
    seed: u64,
    make_agent: F,
) -> Result<Vec<Episode>, SimError>
where
    A: AgentStrategy,
    F: Fn() -> A + Sync,
{
    if env.bundles.is_empty() {
        return Err(FlowError::EmptyCatalog.into());
    }
    let seeds = derive_seeds(&mut ChaCha8Rng::seed_from_u64(seed), n);
    seeds
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let bundle = &env.bundles[rng.gen_range(0..env.bundles.len())];
            let mut agent = make_agent();
            run_episode(&mut agent, env, bundle, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k_buyer: f64,
    pub k_seller: f64,
    pub episodes: usize,
    pub buyer_utility: f64,
    pub seller_utility: f64,
    pub accept_rate: f64,
    /// Standard error of the mean buyer utility.
    pub buyer_stderr: f64,
    pub seller_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k_buyer,k_seller,buyer_utility,seller_utility,accept_rate,stderr\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                c.k_buyer, c.k_seller, c.buyer_utility, c.seller_utility, c.accept_rate, c.buyer_stderr
            ));
        }
        out
    }
}

pub const TABLE_GRID: [(f64, f64); 4] = [(0.2, 0.8), (0.4, 0.6), (0.6, 0.4), (0.8, 0.2)];

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Price-only negotiations for each `(k_buyer, k_seller)` cell. Every cell
/// replays the same `episodes` sampled deals, so cells differ only in the
/// concession rates.
pub fn k_sweep(
    grid: &[(f64, f64)],
    episodes: usize,
    base: &FlowConfig,
    bundles: &[Bundle],
    seed: u64,
) -> Result<SweepResult, SimError> {
    if grid.is_empty() {
        return Err(SimError::BadSweep("empty grid".into()));
    }
    if episodes < 30 {
        return Err(SimError::BadSweep(format!("need at least 30 episodes per cell, got {episodes}")));
    }
    if bundles.is_empty() {
        return Err(FlowError::EmptyCatalog.into());
    }
    base.negotiation
        .validate()
        .map_err(|e| SimError::BadSweep(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deals: Vec<DealSetup> = (0..episodes)
        .map(|_| {
            let bundle = &bundles[rng.gen_range(0..bundles.len())];
            sample_setup(bundle, base, &mut rng)
        })
        .collect();

    let cells = grid
        .par_iter()
        .map(|&(k_buyer, k_seller)| {
            let mut cfg = base.negotiation.clone();
            cfg.k_buyer = k_buyer;
            cfg.k_seller = k_seller;
            cfg.validate().map_err(|e| SimError::BadSweep(e.to_string()))?;
            let mut buyer = Vec::with_capacity(episodes);
            let mut seller = Vec::with_capacity(episodes);
            let mut accepted = 0usize;
            for d in &deals {
                let trace = price_trace(&cfg, d.list_price, d.buyer_open, d.seller_min, d.ceiling)?;
                let (b, s) = match trace.terminal {
                    TraceTerminal::Accepted(p) => {
                        accepted += 1;
                        utilities(d, d.list_price, Some(p))
                    }
                    _ => (0.0, 0.0),
                };
                buyer.push(b);
                seller.push(s);
            }
            let (bu, bse) = mean_stderr(&buyer);
            let (su, sse) = mean_stderr(&seller);
            Ok(SweepCell {
                k_buyer,
                k_seller,
                episodes,
                buyer_utility: bu,
                seller_utility: su,
                accept_rate: accepted as f64 / episodes as f64,
                buyer_stderr: bse,
                seller_stderr: sse,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(SweepResult { cells })
}

/// Dataset statistics in the shape of a corpus summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub utterances: usize,
    pub mean_turns: f64,
    pub mean_words_customer: f64,
    pub mean_words_agent: f64,
    /// Distinct lowercased words, digit strings excluded.
    pub unique_words: usize,
    /// Mean BLEU-1 over sampled utterance pairs; absent below two utterances.
    pub self_bleu1: Option<f64>,
    pub accept_rate: f64,
}

/// Clipped unigram precision of `hyp` against `reference` with the brevity
/// penalty.
pub fn bleu1(hyp: &str, reference: &str) -> f64 {
    let h = tokenize(hyp);
    let r = tokenize(reference);
    if h.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut ref_counts = std::collections::HashMap::new();
    for t in &r {
        *ref_counts.entry(t.as_str()).or_insert(0usize) += 1;
    }
    let mut hits = 0usize;
    for t in &h {
        if let Some(c) = ref_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    let precision = hits as f64 / h.len() as f64;
    let bp = if h.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / h.len() as f64).exp()
    };
    bp * precision
}

pub const SELF_BLEU_PAIRS: usize = 1000;

pub fn corpus_stats(corpus: &[Dialogue], seed: u64) -> Result<CorpusStats, SimError> {
    if corpus.is_empty() {
        return Err(SimError::EmptyCorpus);
    }
    let turns: Vec<_> = corpus.iter().flat_map(|d| &d.turns).collect();
    let words = |speaker: Speaker| {
        let lens: Vec<usize> = turns
            .iter()
            .filter(|t| t.speaker == speaker)
            .map(|t| t.text.split_whitespace().count())
            .collect();
        if lens.is_empty() {
            0.0
        } else {
            lens.iter().sum::<usize>() as f64 / lens.len() as f64
        }
    };
    let mut vocab = std::collections::HashSet::new();
    for t in &turns {
        for w in tokenize(&t.text) {
            if !w.chars().all(|c| c.is_ascii_digit()) {
                vocab.insert(w);
            }
        }
    }
    let self_bleu1 = (turns.len() >= 2).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..turns.len()).collect();
        let total: f64 = (0..SELF_BLEU_PAIRS)
            .map(|_| {
                let pair: Vec<&usize> = idx.choose_multiple(&mut rng, 2).collect();
                bleu1(&turns[*pair[0]].text, &turns[*pair[1]].text)
            })
            .sum();
        total / SELF_BLEU_PAIRS as f64
    });
    let accepted = corpus
        .iter()
        .filter(|d| d.outcome.status == OutcomeStatus::Accepted)
        .count();
    Ok(CorpusStats {
        dialogues: corpus.len(),
        utterances: turns.len(),
        mean_turns: turns.len() as f64 / corpus.len() as f64,
        mean_words_customer: words(Speaker::Customer),
        mean_words_agent: words(Speaker::Agent),
        unique_words: vocab.len(),
        self_bleu1,
        accept_rate: accepted as f64 / corpus.len() as f64,
    })
}
