//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Every expected value is computed here from first principles; library
//! helpers are only used as the thing under test.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bundlebargain::concession::{buyer_counter, seller_counter};
use bundlebargain::corpus::{read_corpus, split_corpus, split_sizes};
use bundlebargain::examples::reference_dialogue;
use bundlebargain::flow::{generate_corpus, FlowConfig};
use bundlebargain::policy::{
    clip_gradient, clip_objective, clipped_objective, collect, demonstrations, imitation_init, train,
    ImitationConfig, PpoConfig, Sample, FEATURE_DIM,
};
use bundlebargain::realize::TemplateLibrary;
use bundlebargain::reward::{
    combined, normalize_batch, r1_intent_consistency, r2_price_gap, r3_negotiation_strategy,
    r4_interactiveness, score_dialogue, FinalIntent, RewardWeights,
};
use bundlebargain::sim::{k_sweep, training_pairs, SimEnv, TABLE_GRID};
use bundlebargain::{
    intent, validate_dialogue, Catalog, CompositeIntent, DealState, Dialogue, DialogueTurn,
    IntentAtom, NegotiationConfig, OutcomeStatus, Price, Speaker,
};
use bundlebargain_service::{serve, AppState, ServiceConfig, SessionDescriptor, SessionView, TurnRequest, TurnResponse};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::{Client, StatusCode};
use serde_json::json;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &res {
        Ok(d) => println!("PASS  {name:<22} {d} [{secs:.2}s]"),
        Err(d) => println!("FAIL  {name:<22} {d} [{secs:.2}s]"),
    }
    res.is_ok()
}

fn within(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, want {want} ± {tol}"))
}

// ---------------------------------------------------------------------------
// concession

fn concession_grid() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = NegotiationConfig::default();
    let bundle = Catalog::builtin().bundles()[0].clone();
    let template = DealState::open(bundle.clone(), &cfg, Price(1), Price(0)).unwrap();
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let ps = rng.gen_range(1_000u64..500_000);
        let pb = rng.gen_range(ps / 4..=ps);
        let pmin = if case % 3 == 0 { rng.gen_range(pb..=ps) } else { rng.gen_range(0..=pb) };
        let (ks, kb) = (rng.gen_range(0.05..1.5), rng.gen_range(0.05..1.5));
        let t = rng.gen_range(1u32..=20);
        let mut state = template.clone();
        state.seller_price = Price(ps);
        state.buyer_price = Price(pb);
        state.seller_min = Price(pmin);
        state.k_seller = ks;
        state.k_buyer = kb;
        state.t = t;

        let (psf, pbf) = (ps as f64, pb as f64);
        let seller = pbf + (psf - pbf) * (-ks * t as f64).exp();
        let seller = seller.clamp((pb.max(pmin)) as f64, psf);
        let buyer = psf - (psf - pbf) * (-kb * t as f64).exp();
        let buyer = buyer.clamp(pbf, psf);

        let got_s = seller_counter(&state).map_err(|e| format!("case {case}: {e}"))?.as_f64();
        let got_b = buyer_counter(&state).map_err(|e| format!("case {case}: {e}"))?.as_f64();
        let err = (got_s - seller).abs().max((got_b - buyer).abs());
        ensure(err <= 0.5, || {
            format!("case {case}: ps {ps} pb {pb} pmin {pmin} t {t}: seller {got_s} vs {seller}, buyer {got_b} vs {buyer}")
        })?;
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 cases, max |err| {worst:.3} minor units"))
}

// ---------------------------------------------------------------------------
// golden trace

fn golden_trace(env: &SimEnv) -> Verdict {
    let d = reference_dialogue();
    let violations = validate_dialogue(&d);
    ensure(violations.is_empty(), || format!("fixture invalid: {violations:?}"))?;
    ensure(d.outcome.status == OutcomeStatus::Accepted, || "fixture not accepted".into())?;
    let s = score_dialogue(&d, &env.classifier, &RewardWeights::default(), Price(80_000))
        .map_err(|e| e.to_string())?;
    ensure(s.initial_price == Price(92_800) && s.final_price == Price(83_300), || {
        format!("prices {} -> {}", s.initial_price, s.final_price)
    })?;
    let (_, last) = s.turns.last().ok_or("no agent turns")?;
    let r2 = last.r2.ok_or("terminal r2 missing")?;
    let r3 = last.r3.ok_or("terminal r3 missing")?;
    within(r2, 83_300.0 / 92_800.0, 1e-4, "r2")?;
    within(r2, 0.8976, 1e-4, "r2 vs published")?;
    ensure(r3 >= 0.0, || format!("r3 {r3} < 0"))?;
    Ok(format!("r2 {r2:.5}, r3 {r3:.5}"))
}

// ---------------------------------------------------------------------------
// reward table

fn reward_table() -> Verdict {
    let p = |x| Price(x);
    let exact = |got: f64, want: f64, what: &str| within(got, want, 1e-12, what);
    let mut n = 0;
    let mut check = |r: Result<(), String>| {
        n += 1;
        r
    };

    check(exact(r2_price_gap(p(500), p(500)).unwrap(), 1.0, "r2 no concession"))?;
    check(exact(r2_price_gap(p(100), p(90)).unwrap(), 90.0 / 100.0, "r2 ratio"))?;

    let r3 = r3_negotiation_strategy(p(110), p(100), FinalIntent::Accept).unwrap();
    check(exact(r3, ((110.0 - 100.0) / 100.0f64).exp(), "r3 accept"))?;
    check(within(r3, 1.10517, 1e-5, "r3 accept vs literal"))?;
    for fin in [FinalIntent::Accept, FinalIntent::Reject] {
        check(exact(r3_negotiation_strategy(p(90), p(100), fin).unwrap(), 0.0, "r3 below reserve"))?;
    }
    check(exact(r3_negotiation_strategy(p(100), p(100), FinalIntent::Reject).unwrap(), -1.0, "r3 reject at reserve"))?;

    check(exact(r4_interactiveness("the blue kettle", &["the blue kettle"]), 0.0, "r4 identical"))?;
    check(exact(r4_interactiveness("the blue kettle", &["a red toaster"]), 1.0, "r4 disjoint"))?;
    check(exact(
        r4_interactiveness("blue kettle", &["kettle blue", "red toaster"]),
        1.0 - (1.0 + 0.0) / 2.0,
        "r4 two priors",
    ))?;

    let w = RewardWeights::default();
    check(exact(combined([1.0; 4], &w), 0.2 + 0.2 + 0.3 + 0.2, "combined unit"))?;
    check(within(combined([1.0; 4], &w), 0.9, 1e-12, "combined unit vs 0.9"))?;
    let proj = RewardWeights::new([1.0, 0.0, 0.0, 0.0]).unwrap();
    check(exact(combined([0.37, 0.8, 1.2, 0.5], &proj), 0.37, "combined projection"))?;
    check(exact(combined([0.0; 4], &w), 0.0, "combined zeros"))?;

    let z = normalize_batch(&[1.0, 3.0]);
    check(ensure(z == vec![-1.0, 1.0], || format!("normalize [1,3] -> {z:?}")))?;
    let z = normalize_batch(&[4.0, 4.0, 4.0]);
    check(ensure(z.iter().all(|v| *v == 0.0), || format!("constant batch -> {z:?}")))?;
    let z = normalize_batch(&[0.3, -2.0, 5.5, 1.25, 0.0]);
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    check(within(mean, 0.0, 1e-9, "normalized mean").and(within(sd, 1.0, 1e-9, "normalized std")))?;

    Ok(format!("{n} table examples, combined(1,1,1,1) = {}", combined([1.0; 4], &w)))
}

// ---------------------------------------------------------------------------
// k-sweep

fn k_sweep_order() -> Verdict {
    let start = Instant::now();
    let bundles = Catalog::builtin().bundles();
    let res = k_sweep(&TABLE_GRID, 200, &FlowConfig::default(), &bundles, 42).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(res.cells.len() == 4 && res.cells.iter().all(|c| c.episodes >= 200), || {
        "sweep did not cover the grid at 200 episodes".into()
    })?;
    let buyer: Vec<f64> = res.cells.iter().map(|c| c.buyer_utility).collect();
    let seller: Vec<f64> = res.cells.iter().map(|c| c.seller_utility).collect();
    ensure(buyer.windows(2).all(|w| w[0] > w[1]), || format!("buyer not decreasing: {buyer:?}"))?;
    ensure(seller.windows(2).all(|w| w[0] < w[1]), || format!("seller not increasing: {seller:?}"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("→");
    Ok(format!("buyer {} seller {}", fmt(&buyer), fmt(&seller)))
}

// ---------------------------------------------------------------------------
// corpus

fn well_formed(d: &Dialogue) -> Result<(), String> {
    let t: &[DialogueTurn] = &d.turns;
    let first = t.first().ok_or("empty")?;
    ensure(first.speaker == Speaker::Customer && first.intent.contains(IntentAtom::Greet), || {
        format!("{} does not open with a customer greeting", d.id)
    })?;
    ensure(t.windows(2).all(|w| w[0].speaker != w[1].speaker), || format!("{}: speakers repeat", d.id))?;
    let last = t.last().unwrap();
    let terminal_ok = if last.intent.contains(IntentAtom::Reject) {
        d.outcome.status == OutcomeStatus::Rejected
    } else if last.intent.contains(IntentAtom::Acknowledge) {
        t.len() >= 2 && t[t.len() - 2].intent.contains(IntentAtom::Accept) && d.outcome.status == OutcomeStatus::Accepted
    } else {
        false
    };
    ensure(terminal_ok, || format!("{}: terminal {} / {:?}", d.id, last.intent.name(), d.outcome.status))
}

fn corpus_targets() -> Verdict {
    let catalog = Catalog::builtin();
    let templates = TemplateLibrary::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let skeletons = generate_corpus(&catalog, 500, &FlowConfig::default(), &mut rng).map_err(|e| e.to_string())?;
    let corpus: Vec<Dialogue> = skeletons
        .iter()
        .map(|s| templates.realize_skeleton(s, &mut rng))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(corpus.len() == 500, || format!("{} dialogues", corpus.len()))?;
    let mean = corpus.iter().map(|d| d.turns.len()).sum::<usize>() as f64 / 500.0;
    ensure((9.0..=17.0).contains(&mean), || format!("mean turns {mean}"))?;
    let structured = corpus.iter().filter(|d| well_formed(d).is_ok()).count();
    if let Some(bad) = corpus.iter().find_map(|d| well_formed(d).err()) {
        return Err(format!("structure {structured}/500: {bad}"));
    }
    let valid = corpus.iter().filter(|d| validate_dialogue(d).is_empty()).count();
    ensure(valid == 500, || format!("{valid}/500 pass validation"))?;

    let ratios = [0.8, 0.12, 0.08];
    let sizes = split_sizes(4163, ratios).map_err(|e| e.to_string())?;
    ensure(sizes == [3330, 500, 333], || format!("split sizes {sizes:?}"))?;
    let splits = split_corpus((0..4163).collect::<Vec<u32>>(), ratios, 11).map_err(|e| e.to_string())?;
    let counts = splits.counts().as_array();
    ensure(counts == [3330, 500, 333], || format!("split counts {counts:?}"))?;
    let mut all: Vec<u32> = splits.train.iter().chain(&splits.test).chain(&splits.valid).copied().collect();
    all.sort_unstable();
    ensure(all == (0..4163).collect::<Vec<_>>(), || "split is not a partition".into())?;
    Ok(format!("mean turns {mean:.2}, structure 500/500, split {counts:?}"))
}

// ---------------------------------------------------------------------------
// PPO

fn softmax(w: &[Vec<f64>], x: &[f64], legal: &[usize]) -> Vec<f64> {
    let logits: Vec<f64> = legal.iter().map(|&j| w[j].iter().zip(x).map(|(a, b)| a * b).sum()).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let mut p = vec![0.0; w.len()];
    for (&j, l) in legal.iter().zip(&logits) {
        p[j] = (l - m).exp() / z;
    }
    p
}

fn random_batch(rng: &mut ChaCha8Rng, actions: usize) -> (Vec<Vec<f64>>, Vec<Sample>) {
    let w: Vec<Vec<f64>> = (0..actions)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.gen_range(-0.8..0.8)).collect())
        .collect();
    let n = rng.gen_range(8..40);
    let samples = (0..n)
        .map(|_| {
            let features: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut legal: Vec<usize> = (0..actions).collect();
            legal.shuffle(rng);
            legal.truncate(rng.gen_range(2..=actions));
            let action = legal[rng.gen_range(0..legal.len())];
            let p = softmax(&w, &features, &legal);
            Sample {
                features,
                action,
                old_log_prob: p[action].ln() + rng.gen_range(-0.4..0.4),
                advantage: rng.gen_range(-2.0..2.0),
                legal,
            }
        })
        .collect();
    (w, samples)
}

fn fd_gradient(w: &[Vec<f64>], s: &[Sample], eps: f64, h: f64) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; w[0].len()]; w.len()];
    let mut wp = w.to_vec();
    for j in 0..w.len() {
        for k in 0..w[0].len() {
            let base = w[j][k];
            wp[j][k] = base + h;
            let up = clip_objective(&wp, s, eps);
            wp[j][k] = base - h;
            let down = clip_objective(&wp, s, eps);
            wp[j][k] = base;
            g[j][k] = (up - down) / (2.0 * h);
        }
    }
    g
}

fn one_sided_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (mean, mean / (sd / n.sqrt()))
}

/// Upper 5% point of Student's t with 499 degrees of freedom.
const T_CRIT_499: f64 = 1.6479;

fn ppo_correctness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let actions = bundlebargain::flow::AgentMove::ALL.len();
    let mut worst: f64 = 0.0;
    for batch in 0..50 {
        let (w, s) = random_batch(&mut rng, actions);
        let g = clip_gradient(&w, &s, 0.2);
        let fd = fd_gradient(&w, &s, 0.2, 1e-6);
        let flat = |m: &[Vec<f64>]| m.iter().flatten().copied().collect::<Vec<f64>>();
        let (a, b) = (flat(&g), flat(&fd));
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        let rel = if scale == 0.0 { diff } else { diff / scale };
        ensure(rel <= 1e-4, || format!("batch {batch}: relative gradient error {rel:.2e}"))?;
        worst = worst.max(rel);
    }
    ensure(clipped_objective(1.0, 1.0, 0.2) == 1.0, || "clip(1.0, A=1)".into())?;
    ensure(clipped_objective(1.5, 1.0, 0.2) == 1.2, || "clip(1.5, A=1)".into())?;
    ensure(clipped_objective(0.5, -1.0, 0.2) == -0.8, || "clip(0.5, A=-1)".into())?;

    let catalog = Catalog::builtin();
    let flow = FlowConfig::default();
    let cfg = PpoConfig::default();
    ensure(cfg.seed == 10 && cfg.clip == 0.2 && cfg.epochs == 17, || format!("{cfg:?}"))?;
    let (env, _) = SimEnv::standard(&catalog, flow.clone(), RewardWeights::default(), cfg.seed)
        .map_err(|e| e.to_string())?;
    let demos = demonstrations(&catalog, &flow, 1000, cfg.seed).map_err(|e| e.to_string())?;
    let (init, _) = imitation_init(&demos, &ImitationConfig::default()).map_err(|e| e.to_string())?;
    let (trained, _) = train(&env, &cfg, &init).map_err(|e| e.to_string())?;

    let eval_seed = 20_000;
    let rewards = |p| -> Result<Vec<f64>, String> {
        Ok(collect(&env, p, 500, eval_seed)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|e| e.metrics.episode_reward)
            .collect())
    };
    let (rt, ri) = (rewards(&trained)?, rewards(&init)?);
    let (gain, t) = one_sided_t(&rt, &ri);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let elapsed = start.elapsed();
    let summary = format!(
        "fd worst {worst:.1e}; trained {:.4} vs init {:.4} (diff {gain:+.4}, t {t:.2}, crit {T_CRIT_499})",
        mean(&rt),
        mean(&ri)
    );
    ensure(t > T_CRIT_499, || format!("not significant: {summary}"))?;
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// classifier

fn classifier_quality(env: &SimEnv) -> Verdict {
    let clf = &env.classifier;
    let classes: Vec<CompositeIntent> = clf.classes().to_vec();
    let fresh = training_pairs(&Catalog::builtin(), &FlowConfig::default(), &TemplateLibrary::builtin(), 2000, 991)
        .map_err(|e| e.to_string())?;
    let known: Vec<_> = fresh.iter().filter(|(_, y)| classes.contains(y)).collect();
    ensure(known.len() * 10 >= fresh.len() * 9, || format!("only {}/{} labels known", known.len(), fresh.len()))?;
    let hits = known
        .iter()
        .filter(|(x, y)| {
            let p = clf.predict_proba(x);
            let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            classes[best] == *y
        })
        .count();
    let acc = hits as f64 / fresh.len() as f64;
    ensure(acc >= 0.90, || format!("held-out accuracy {acc:.4}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let words: Vec<&str> = fresh.iter().flat_map(|(x, _)| x.split_whitespace()).take(5000).collect();
    for i in 0..100_000 {
        let text: String = match i % 4 {
            0 => String::new(),
            1 => (0..rng.gen_range(1..60)).map(|_| rng.gen::<char>()).collect(),
            2 => (0..rng.gen_range(1..30)).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" "),
            _ => (0..rng.gen_range(1..40)).map(|_| rng.gen_range(' '..='~')).collect(),
        };
        let p = clf.predict_proba(&text);
        let sum: f64 = p.iter().sum();
        ensure(
            p.len() == classes.len() && p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) && (sum - 1.0).abs() <= 1e-9,
            || format!("input {i} {text:?}: sum {sum}"),
        )?;
        let target = &classes[i % classes.len()];
        let r1 = r1_intent_consistency(clf, &text, target).map_err(|e| e.to_string())?;
        ensure((0.0..=1.0).contains(&r1), || format!("input {i}: r1 {r1}"))?;
    }
    Ok(format!("accuracy {acc:.4} on {} fresh utterances; 100000 fuzzed inputs valid", fresh.len()))
}

// ---------------------------------------------------------------------------
// service

struct Api {
    base: String,
    client: Client,
}

impl Api {
    async fn post<T: serde::de::DeserializeOwned>(&self, path: &str, body: &impl serde::Serialize) -> Result<T, String> {
        let r = self.client.post(format!("{}{path}", self.base)).json(body).send().await.map_err(|e| e.to_string())?;
        let status = r.status();
        if !status.is_success() {
            return Err(format!("{path}: {status} {}", r.text().await.unwrap_or_default()));
        }
        r.json().await.map_err(|e| e.to_string())
    }

    async fn view(&self, id: &str) -> Result<SessionView, String> {
        let r = self.client.get(format!("{}/sessions/{id}", self.base)).send().await.map_err(|e| e.to_string())?;
        ensure(r.status() == StatusCode::OK, || format!("GET {id}: {}", r.status()))?;
        r.json().await.map_err(|e| e.to_string())
    }

    async fn close(&self, id: &str) -> Result<Dialogue, String> {
        let r = self.client.delete(format!("{}/sessions/{id}", self.base)).send().await.map_err(|e| e.to_string())?;
        r.json().await.map_err(|e| e.to_string())
    }
}

async fn scripted(api: &Api, bundle: &str, seed: u64) -> Result<(String, Vec<DialogueTurn>), String> {
    let d: SessionDescriptor = api.post("/sessions", &json!({"bundle_id": bundle, "seed": seed})).await?;
    let id = d.session_id;
    let path = format!("/sessions/{id}/turns");
    let mut seen = Vec::new();
    let greet = TurnRequest::structured(intent!(Greet - Ask), None, vec![]);
    let mut r: TurnResponse = api.post(&path, &greet).await?;
    let mut offer = None::<u64>;
    for round in 0..30 {
        seen.push(r.customer_turn.clone());
        seen.extend(r.agent_turn.clone());
        if r.snapshot.closed {
            return Ok((id, seen));
        }
        let req = if seen.last().unwrap().intent.contains(IntentAtom::Accept) {
            TurnRequest::structured(intent!(Acknowledge), None, vec![])
        } else if seed % 3 == 0 && round == 2 {
            let closed = api.close(&id).await?;
            seen.push(closed.turns.last().cloned().ok_or("close returned no turns")?);
            return Ok((id, seen));
        } else {
            let ask = r.snapshot.seller_price.0;
            let next = offer.map_or(ask * 3 / 4, |p: u64| p.min(ask) + (ask - p.min(ask)) / 2).clamp(1, ask);
            offer = Some(next);
            TurnRequest::structured(intent!(NegotiatePriceDecrease), Some(Price(next)), vec![])
        };
        r = api.post(&path, &req).await?;
    }
    Err(format!("session {id} did not finish"))
}

fn service_sessions(env: &SimEnv, store: &Path) -> Verdict {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(8).enable_all().build().unwrap();
    rt.block_on(async {
        let mut cfg = ServiceConfig::standard_with(Catalog::builtin(), FlowConfig::default(), env.classifier.clone());
        cfg.store = Some(store.to_path_buf());
        let state = AppState::new(cfg);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(serve(listener, state.clone(), async move {
            let _ = stopped.await;
        }));
        let api = Arc::new(Api { base, client: Client::new() });
        let bundles = Catalog::builtin().bundle_ids();

        let tasks: Vec<_> = (0..100u64)
            .map(|seed| {
                let api = api.clone();
                let bundle = bundles[seed as usize % bundles.len()].clone();
                tokio::spawn(async move { scripted(&api, &bundle, seed).await.map(|r| (bundle, r)) })
            })
            .collect();
        let mut results = Vec::new();
        for t in tasks {
            results.push(t.await.map_err(|e| e.to_string())??);
        }

        let ids: BTreeSet<&String> = results.iter().map(|(_, (id, _))| id).collect();
        ensure(ids.len() == 100, || format!("{} distinct ids", ids.len()))?;
        for (bundle, (id, seen)) in &results {
            let v = api.view(id).await?;
            ensure(&v.transcript == seen, || format!("session {id}: server transcript differs from client view"))?;
            ensure(&v.bundle.id == bundle, || format!("session {id}: bundle {} != {bundle}", v.bundle.id))?;
        }
        let _ = stop.send(());
        server.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;

        let persisted = read_corpus(store).map_err(|e| e.to_string())?;
        ensure(persisted.len() == 100, || format!("{} dialogues persisted", persisted.len()))?;
        for d in &persisted {
            let v = validate_dialogue(d);
            ensure(v.is_empty(), || format!("{}: {v:?}", d.id))?;
            let (bundle, (_, seen)) = results
                .iter()
                .find(|(_, (id, _))| *id == d.id)
                .ok_or_else(|| format!("unknown persisted id {}", d.id))?;
            ensure(&d.turns == seen && d.bundle.id == *bundle, || format!("{}: persisted turns leaked or differ", d.id))?;
        }
        let accepted = persisted.iter().filter(|d| d.outcome.status == OutcomeStatus::Accepted).count();
        Ok(format!("100 sessions, 100 persisted and valid ({accepted} accepted), no leakage"))
    })
}

fn main() -> ExitCode {
    let env = SimEnv::standard(&Catalog::builtin(), FlowConfig::default(), RewardWeights::default(), 3)
        .expect("standard environment");
    let store = tempfile::tempdir().expect("temp dir");

    let results = [
        run("concession-grid", concession_grid),
        run("golden-trace", || golden_trace(&env.0)),
        run("reward-table", reward_table),
        run("k-sweep-ordering", k_sweep_order),
        run("corpus-targets", corpus_targets),
        run("ppo-correctness", ppo_correctness),
        run("classifier", || classifier_quality(&env.0)),
        run("service-sessions", || service_sessions(&env.0, &store.path().join("sessions.jsonl"))),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
