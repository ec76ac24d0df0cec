//! Linear softmax agent policy trained with the clipped surrogate objective.
//!
//! The policy scores each [`AgentMove`] as `w_a . x(s)` and samples from the
//! softmax over the moves that are legal in the current state. It is first
//! fit to rule-agent decisions by maximum likelihood, then improved by
//! clipped policy-gradient steps on self-play rewards.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    derive_seeds, run_flow, sample_setup, AgentChoice, AgentMove, AgentStep, AgentStrategy,
    AgentView, FlowConfig, FlowError, FlowRecord, RuleAgent,
};
use crate::model::{Catalog, CompositeIntent, DealState, IntentAtom, Price};
use crate::reward::normalize_batch;
use crate::sim::{run_episodes, Episode, SimEnv, SimError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("deal is closed")]
    ClosedDeal,
    #[error("no legal action")]
    NoLegalAction,
    #[error("corpus has no agent decisions")]
    EmptyCorpus,
    #[error("all advantages are zero")]
    DegenerateBatch,
    #[error("bad config: {0}")]
    Config(String),
    #[error("feature vector has length {got}, policy expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

const SCALAR_FEATURES: usize = 7;
pub const FEATURE_DIM: usize = SCALAR_FEATURES + IntentAtom::ALL.len();

/// Fixed-length state encoding:
/// bias, gap `(Ps - Pb) / Ps`, `t / max_turns`, `price_rounds_used / d`,
/// active bundle fraction, offer-within-tolerance flag, offer margin over
/// the reserve (clamped to [-1, 1]), and a one-hot of the customer's
/// primary act. `offer` defaults to the state's buyer price.
pub fn featurize_state(
    state: &DealState,
    customer: &CompositeIntent,
    offer: Option<Price>,
) -> Result<Vec<f64>, PolicyError> {
    if !state.is_open() {
        return Err(PolicyError::ClosedDeal);
    }
    Ok(features(state, customer, offer))
}

fn features(state: &DealState, customer: &CompositeIntent, offer: Option<Price>) -> Vec<f64> {
    let ps = state.seller_price.as_f64().max(1.0);
    let pb = offer.unwrap_or(state.buyer_price).as_f64();
    let pmin = state.seller_min.as_f64().max(1.0);
    let mut x = vec![0.0; FEATURE_DIM];
    x[0] = 1.0;
    x[1] = (ps - pb) / ps;
    x[2] = (state.t as f64 / state.max_turns.max(1) as f64).min(2.0);
    x[3] = state.price_rounds_used as f64 / state.d.max(1) as f64;
    x[4] = state.bundle.active_fraction();
    x[5] = f64::from(u8::from(offer.is_some() && pb >= ps * (1.0 - state.tol)));
    x[6] = ((pb - pmin) / pmin).clamp(-1.0, 1.0);
    let act = crate::flow::primary_act(customer);
    let k = IntentAtom::ALL
        .iter()
        .position(|a| *a == act)
        .expect("every atom is listed");
    x[SCALAR_FEATURES + k] = 1.0;
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub feature_dim: usize,
    pub actions: Vec<AgentMove>,
    /// One row per action.
    pub weights: Vec<Vec<f64>>,
    pub version: u32,
}

impl PolicyParams {
    /// All-zero weights: uniform over legal actions.
    pub fn zeros() -> Self {
        PolicyParams {
            feature_dim: FEATURE_DIM,
            actions: AgentMove::ALL.to_vec(),
            weights: vec![vec![0.0; FEATURE_DIM]; AgentMove::ALL.len()],
            version: 0,
        }
    }

    pub fn action_index(&self, mv: AgentMove) -> Option<usize> {
        self.actions.iter().position(|a| *a == mv)
    }

    fn legal_indices(&self, legal: &[AgentMove]) -> Vec<usize> {
        legal.iter().filter_map(|m| self.action_index(*m)).collect()
    }

    fn check(&self, x: &[f64]) -> Result<(), PolicyError> {
        if x.len() != self.feature_dim {
            return Err(PolicyError::Shape {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Masked softmax over action indices; illegal actions get 0.
    pub fn probs(&self, x: &[f64], legal: &[usize]) -> Vec<f64> {
        masked_softmax(&self.weights, x, legal)
    }

    /// Probability of each legal move, in `legal` order.
    pub fn move_probs(&self, x: &[f64], legal: &[AgentMove]) -> Result<Vec<f64>, PolicyError> {
        self.check(x)?;
        let idx = self.legal_indices(legal);
        let p = self.probs(x, &idx);
        Ok(legal
            .iter()
            .map(|m| self.action_index(*m).map_or(0.0, |i| p[i]))
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let p: PolicyParams = serde_json::from_str(text)?;
        let ok = p.weights.len() == p.actions.len()
            && p.weights.iter().all(|w| w.len() == p.feature_dim)
            && p.feature_dim == FEATURE_DIM;
        if !ok {
            return Err(PolicyError::Shape {
                expected: FEATURE_DIM,
                got: p.feature_dim,
            });
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn masked_softmax(weights: &[Vec<f64>], x: &[f64], legal: &[usize]) -> Vec<f64> {
    let mut p = vec![0.0; weights.len()];
    if legal.is_empty() {
        return p;
    }
    let logits: Vec<f64> = legal
        .iter()
        .map(|&a| weights[a].iter().zip(x).map(|(w, v)| w * v).sum())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    for (&a, e) in legal.iter().zip(exp) {
        p[a] = e / sum;
    }
    p
}

/// Draws a legal move. A single legal move is returned with log-prob 0.
pub fn sample_action(
    policy: &PolicyParams,
    x: &[f64],
    legal: &[AgentMove],
    rng: &mut dyn RngCore,
) -> Result<(AgentMove, f64), PolicyError> {
    policy.check(x)?;
    let idx = policy.legal_indices(legal);
    match idx.as_slice() {
        [] => Err(PolicyError::NoLegalAction),
        [only] => Ok((policy.actions[*only], 0.0)),
        _ => {
            let p = policy.probs(x, &idx);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = *idx.last().expect("non-empty");
            for &a in &idx {
                acc += p[a];
                if u < acc {
                    pick = a;
                    break;
                }
            }
            Ok((policy.actions[pick], p[pick].ln()))
        }
    }
}

/// An [`AgentStrategy`] that samples from a policy.
#[derive(Debug, Clone)]
pub struct PolicyAgent<'a> {
    pub policy: &'a PolicyParams,
    /// Take the most probable move instead of sampling.
    pub greedy: bool,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(policy: &'a PolicyParams) -> Self {
        PolicyAgent {
            policy,
            greedy: false,
        }
    }
}

impl AgentStrategy for PolicyAgent<'_> {
    fn choose(
        &mut self,
        view: &AgentView<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<AgentChoice, FlowError> {
        if let [only] = view.legal {
            return Ok(AgentChoice {
                mv: *only,
                log_prob: Some(0.0),
            });
        }
        let strategy_err = |e: PolicyError| FlowError::Strategy(e.to_string());
        let x = featurize_state(view.state, view.customer, view.offer).map_err(strategy_err)?;
        if self.greedy {
            let p = self.policy.move_probs(&x, view.legal).map_err(strategy_err)?;
            let best = (0..p.len())
                .max_by(|a, b| p[*a].total_cmp(&p[*b]).then(b.cmp(a)))
                .ok_or(FlowError::NoLegalMove)?;
            return Ok(AgentChoice {
                mv: view.legal[best],
                log_prob: Some(p[best].ln()),
            });
        }
        let (mv, log_prob) = sample_action(self.policy, &x, view.legal, rng).map_err(strategy_err)?;
        Ok(AgentChoice {
            mv,
            log_prob: Some(log_prob),
        })
    }
}

/// One agent decision with what the learner needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajStep {
    pub features: Vec<f64>,
    /// Legal action indices.
    pub legal: Vec<usize>,
    pub action: usize,
    /// Log-probability under the behavior policy.
    pub log_prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    pub episode_return: f64,
}

fn step_record(policy: &PolicyParams, step: &AgentStep) -> Result<TrajStep, PolicyError> {
    // the acknowledgement after a customer accept sees a closed deal
    let features = features(&step.state, &step.customer, step.offer);
    let legal = policy.legal_indices(&step.legal);
    let action = policy
        .action_index(step.choice.mv)
        .ok_or(PolicyError::NoLegalAction)?;
    let log_prob = match step.choice.log_prob {
        Some(lp) => lp,
        None => policy.probs(&features, &legal)[action].ln(),
    };
    Ok(TrajStep {
        features,
        legal,
        action,
        log_prob,
        reward: 0.0,
    })
}

/// Converts a scored episode into a trajectory. Step rewards are the
/// per-turn reward totals; the return is the episode total.
pub fn trajectory(policy: &PolicyParams, ep: &Episode) -> Result<Trajectory, PolicyError> {
    let mut steps = ep
        .record
        .steps
        .iter()
        .map(|s| step_record(policy, s))
        .collect::<Result<Vec<_>, _>>()?;
    for (step, (_, b)) in steps.iter_mut().zip(&ep.score.turns) {
        step.reward = b.total;
    }
    Ok(Trajectory {
        steps,
        episode_return: ep.score.total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_episodes: usize,
    /// Gradient steps taken on each collected batch.
    pub update_steps: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            learning_rate: 0.01,
            epochs: 17,
            batch_episodes: 64,
            update_steps: 8,
            seed: 10,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(PolicyError::Config(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if self.epochs < 1 || self.batch_episodes < 2 || self.update_steps < 1 {
            return Err(PolicyError::Config(
                "epochs and update_steps must be at least 1, batch_episodes at least 2".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PolicyError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// A decision step paired with its advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub legal: Vec<usize>,
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
}

/// Decision steps (two or more legal actions) with the normalized episode
/// return broadcast as advantage.
pub fn samples(batch: &[Trajectory]) -> Vec<Sample> {
    let returns: Vec<f64> = batch.iter().map(|t| t.episode_return).collect();
    let adv = normalize_batch(&returns);
    batch
        .iter()
        .zip(adv)
        .flat_map(|(traj, a)| {
            traj.steps.iter().filter(|s| s.legal.len() > 1).map(move |s| Sample {
                features: s.features.clone(),
                legal: s.legal.clone(),
                action: s.action,
                old_log_prob: s.log_prob,
                advantage: a,
            })
        })
        .collect()
}

fn ratio(weights: &[Vec<f64>], s: &Sample) -> (f64, Vec<f64>) {
    let p = masked_softmax(weights, &s.features, &s.legal);
    ((p[s.action].ln() - s.old_log_prob).exp(), p)
}

/// Mean clipped surrogate over `samples` at `weights`.
pub fn clip_objective(weights: &[Vec<f64>], samples: &[Sample], eps: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| clipped_objective(ratio(weights, s).0, s.advantage, eps))
        .sum::<f64>()
        / samples.len() as f64
}

/// Gradient of [`clip_objective`]. A sample contributes only while its
/// unclipped term is the minimum, through
/// `A * r * d log pi(a|s) = A * r * (1[j = a] - pi_j) x` for legal `j`.
pub fn clip_gradient(weights: &[Vec<f64>], samples: &[Sample], eps: f64) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; weights[0].len()]; weights.len()];
    if samples.is_empty() {
        return g;
    }
    let n = samples.len() as f64;
    for s in samples {
        let (r, p) = ratio(weights, s);
        let a = s.advantage;
        let active = if a >= 0.0 { r <= 1.0 + eps } else { r >= 1.0 - eps };
        if !active {
            continue;
        }
        for &j in &s.legal {
            let coef = a * r * (f64::from(u8::from(j == s.action)) - p[j]) / n;
            for (gj, x) in g[j].iter_mut().zip(&s.features) {
                *gj += coef * x;
            }
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub samples: usize,
    /// Mean new/old probability ratio after the update.
    pub mean_ratio: f64,
    /// Share of samples whose ratio left `[1 - eps, 1 + eps]`.
    pub clip_fraction: f64,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Gradient ascent on the clipped surrogate for up to `cfg.update_steps`
/// steps. Each step is halved until it raises the objective; the update
/// stops early when no step does.
pub fn ppo_update(
    policy: &PolicyParams,
    batch: &[Trajectory],
    cfg: &PpoConfig,
) -> Result<(PolicyParams, UpdateDiagnostics), PolicyError> {
    cfg.validate()?;
    let samples = samples(batch);
    if samples.iter().all(|s| s.advantage == 0.0) {
        return Err(PolicyError::DegenerateBatch);
    }
    let mut weights = policy.weights.clone();
    let objective_before = clip_objective(&weights, &samples, cfg.clip);
    let mut current = objective_before;
    'steps: for _ in 0..cfg.update_steps {
        let g = clip_gradient(&weights, &samples, cfg.clip);
        let mut lr = cfg.learning_rate;
        // backtrack until the step improves the objective
        for _ in 0..30 {
            let trial: Vec<Vec<f64>> = weights
                .iter()
                .zip(&g)
                .map(|(w, gw)| w.iter().zip(gw).map(|(wi, gi)| wi + lr * gi).collect())
                .collect();
            let value = clip_objective(&trial, &samples, cfg.clip);
            if value > current {
                weights = trial;
                current = value;
                continue 'steps;
            }
            lr /= 2.0;
        }
        break;
    }
    let ratios: Vec<f64> = samples.iter().map(|s| ratio(&weights, s).0).collect();
    let clipped = ratios
        .iter()
        .filter(|r| (**r - 1.0).abs() > cfg.clip)
        .count();
    let diag = UpdateDiagnostics {
        samples: samples.len(),
        mean_ratio: ratios.iter().sum::<f64>() / ratios.len().max(1) as f64,
        clip_fraction: clipped as f64 / ratios.len().max(1) as f64,
        objective_before,
        objective_after: clip_objective(&weights, &samples, cfg.clip),
    };
    let next = PolicyParams {
        weights,
        version: policy.version + 1,
        ..policy.clone()
    };
    Ok((next, diag))
}

/// Rule-agent demonstrations: `n` flows over bundles drawn from `catalog`.
pub fn demonstrations(
    catalog: &Catalog,
    config: &FlowConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<FlowRecord>, PolicyError> {
    let bundles = catalog.bundles();
    if bundles.is_empty() {
        return Err(FlowError::EmptyCatalog.into());
    }
    derive_seeds(&mut ChaCha8Rng::seed_from_u64(seed), n)
        .into_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let bundle = &bundles[rng.gen_range(0..bundles.len())];
            let setup = sample_setup(bundle, config, &mut rng);
            let mut agent = RuleAgent::new(config.table());
            Ok(run_flow(bundle, setup, config, &mut agent, &mut rng)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImitationConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub heldout_fraction: f64,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        ImitationConfig {
            seed: 10,
            epochs: 40,
            learning_rate: 0.2,
            l2: 1e-4,
            heldout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImitationReport {
    pub n_train: usize,
    pub n_heldout: usize,
    /// Top-1 accuracy on held-out steps.
    pub heldout_accuracy: f64,
    /// Held-out accuracy on steps with more than one legal move.
    pub decision_accuracy: f64,
    pub uniform_baseline: f64,
}

/// Maximum-likelihood fit of the masked softmax to demonstrated moves.
/// Records are split whole so held-out steps come from unseen dialogues.
pub fn imitation_init(
    records: &[FlowRecord],
    cfg: &ImitationConfig,
) -> Result<(PolicyParams, ImitationReport), PolicyError> {
    let mut policy = PolicyParams::zeros();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_out = (records.len() as f64 * cfg.heldout_fraction).floor() as usize;
    let collect = |ids: &[usize]| -> Result<Vec<TrajStep>, PolicyError> {
        let mut out = Vec::new();
        for &i in ids {
            for s in &records[i].steps {
                out.push(step_record(&PolicyParams::zeros(), s)?);
            }
        }
        Ok(out)
    };
    let heldout = collect(&order[..n_out])?;
    let train = collect(&order[n_out..])?;
    if train.is_empty() {
        return Err(PolicyError::EmptyCorpus);
    }

    let decisions: Vec<&TrajStep> = train.iter().filter(|s| s.legal.len() > 1).collect();
    let mut idx: Vec<usize> = (0..decisions.len()).collect();
    for _ in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        for &n in &idx {
            let s = decisions[n];
            let p = policy.probs(&s.features, &s.legal);
            for &j in &s.legal {
                let g = f64::from(u8::from(j == s.action)) - p[j];
                for (w, x) in policy.weights[j].iter_mut().zip(&s.features) {
                    *w += cfg.learning_rate * (g * x - cfg.l2 * *w);
                }
            }
        }
    }

    let hit = |s: &TrajStep| {
        let p = policy.probs(&s.features, &s.legal);
        let best = s
            .legal
            .iter()
            .copied()
            .max_by(|a, b| p[*a].total_cmp(&p[*b]))
            .expect("steps have a legal move");
        best == s.action
    };
    let acc = |steps: &[&TrajStep]| {
        if steps.is_empty() {
            0.0
        } else {
            steps.iter().filter(|s| hit(s)).count() as f64 / steps.len() as f64
        }
    };
    let all: Vec<&TrajStep> = heldout.iter().collect();
    let dec: Vec<&TrajStep> = heldout.iter().filter(|s| s.legal.len() > 1).collect();
    let report = ImitationReport {
        n_train: train.len(),
        n_heldout: heldout.len(),
        heldout_accuracy: acc(&all),
        decision_accuracy: acc(&dec),
        uniform_baseline: 1.0 / policy.actions.len() as f64,
    };
    Ok((policy, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_reward: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,mean_reward,clip_fraction,mean_ratio\n");
    for e in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            e.epoch, e.mean_reward, e.clip_fraction, e.mean_ratio
        ));
    }
    out
}

/// Episodes played by `policy`, one stream per episode derived from `seed`.
pub fn collect(
    env: &SimEnv,
    policy: &PolicyParams,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Episode>, PolicyError> {
    Ok(run_episodes(env, episodes, seed, || PolicyAgent::new(policy))?)
}

/// Collect, normalize, update; `cfg.epochs` times from `init`. Returns the
/// final policy and one log row per epoch (mean reward of the batch the
/// update was computed on).
pub fn train(
    env: &SimEnv,
    cfg: &PpoConfig,
    init: &PolicyParams,
) -> Result<(PolicyParams, Vec<EpochLog>), PolicyError> {
    cfg.validate()?;
    let mut policy = init.clone();
    let seeds = derive_seeds(&mut ChaCha8Rng::seed_from_u64(cfg.seed), cfg.epochs);
    let mut log = Vec::with_capacity(cfg.epochs);
    for (epoch, seed) in seeds.into_iter().enumerate() {
        let episodes = collect(env, &policy, cfg.batch_episodes, seed)?;
        let batch = episodes
            .iter()
            .map(|ep| trajectory(&policy, ep))
            .collect::<Result<Vec<_>, _>>()?;
        let mean_reward = batch.iter().map(|t| t.episode_return).sum::<f64>() / batch.len() as f64;
        let (next, diag) = match ppo_update(&policy, &batch, cfg) {
            Ok(r) => r,
            Err(PolicyError::DegenerateBatch) => {
                tracing::warn!(epoch, "degenerate batch, skipping update");
                log.push(EpochLog {
                    epoch: epoch + 1,
                    mean_reward,
                    clip_fraction: 0.0,
                    mean_ratio: 1.0,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        tracing::debug!(epoch, mean_reward, ?diag, "ppo epoch");
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_reward,
            clip_fraction: diag.clip_fraction,
            mean_ratio: diag.mean_ratio,
        });
        policy = next;
    }
    Ok((policy, log))
}

/// Paired evaluation: both policies play the same `episodes` seeds.
/// Returns per-episode rewards `(a, b)`.
pub fn paired_rewards(
    env: &SimEnv,
    a: &PolicyParams,
    b: &PolicyParams,
    episodes: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    let ra = collect(env, a, episodes, seed)?;
    let rb = collect(env, b, episodes, seed)?;
    let r = |eps: Vec<Episode>| eps.into_iter().map(|e| e.metrics.episode_reward).collect();
    Ok((r(ra), r(rb)))
}

/// One-sided paired t statistic for `mean(a - b) > 0`.
pub fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = (var / n).sqrt();
    let t = if se > 0.0 { mean / se } else if mean > 0.0 { f64::INFINITY } else { 0.0 };
    (mean, t)
}
