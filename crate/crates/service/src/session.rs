use std::collections::{BTreeMap, BTreeSet};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use bundlebargain::flow::{sample_setup, CustomerAction, FlowError, Negotiation, RuleAgent, SkeletonTurn};
use bundlebargain::intent;
use bundlebargain::policy::PolicyAgent;
use bundlebargain::{
    Bundle, BundleOp, CompositeIntent, DealStatus, Dialogue, DialogueTurn, IntentAtom,
    NegotiationConfig, Outcome, Price, Speaker,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::{ServiceError, Shared};

const EVENT_BUFFER: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    RuleBased,
    Policy { version: u32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRequest {
    #[default]
    Rule,
    Policy,
}

/// Per-session overrides of the service's negotiation defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub k_seller: Option<f64>,
    pub k_buyer: Option<f64>,
    pub tol: Option<f64>,
    pub d: Option<u32>,
    pub max_turns: Option<u32>,
}

impl ConfigOverrides {
    pub fn apply(&self, base: &NegotiationConfig) -> Result<NegotiationConfig, ServiceError> {
        let mut c = base.clone();
        if let Some(v) = self.k_seller {
            c.k_seller = v;
        }
        if let Some(v) = self.k_buyer {
            c.k_buyer = v;
        }
        if let Some(v) = self.tol {
            c.tol = v;
        }
        if let Some(v) = self.d {
            c.d = v;
        }
        if let Some(v) = self.max_turns {
            c.max_turns = v;
        }
        c.validate().map_err(|e| ServiceError::BadConfig(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub bundle_id: String,
    #[serde(default)]
    pub config: ConfigOverrides,
    #[serde(default)]
    pub agent: AgentRequest,
    /// Seeds the deal setup and the agent's choices.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntentSpec {
    Name(String),
    Atoms(CompositeIntent),
}

impl IntentSpec {
    fn resolve(&self) -> Result<CompositeIntent, ServiceError> {
        match self {
            IntentSpec::Name(n) => {
                CompositeIntent::parse(n).map_err(|e| ServiceError::IllegalIntent(e.to_string()))
            }
            IntentSpec::Atoms(c) => Ok(c.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredTurn {
    pub intent: IntentSpec,
    #[serde(default)]
    pub price_offer: Option<Price>,
    #[serde(default)]
    pub ops: Vec<BundleOp>,
    /// Optional surface text; generated from templates when absent.
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRequest {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub structured: Option<StructuredTurn>,
}

impl TurnRequest {
    pub fn text(text: impl Into<String>) -> Self {
        TurnRequest {
            text: Some(text.into()),
            structured: None,
        }
    }

    pub fn structured(intent: CompositeIntent, price_offer: Option<Price>, ops: Vec<BundleOp>) -> Self {
        TurnRequest {
            text: None,
            structured: Some(StructuredTurn {
                intent: IntentSpec::Atoms(intent),
                price_offer,
                ops,
                text: None,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub status: DealStatus,
    /// True once the dialogue has ended.
    pub closed: bool,
    pub list_price: Price,
    pub seller_price: Price,
    pub buyer_price: Option<Price>,
    pub active: BTreeSet<String>,
    pub turns: usize,
    pub awaiting: Option<Speaker>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub agent: AgentKind,
    pub config: NegotiationConfig,
    pub bundle: Bundle,
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub customer_turn: DialogueTurn,
    pub agent_turn: Option<DialogueTurn>,
    /// Classifier confidence for free-text turns.
    pub confidence: Option<f64>,
    pub snapshot: Snapshot,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub agent: AgentKind,
    pub created_at: u64,
    pub bundle: Bundle,
    pub transcript: Vec<DialogueTurn>,
    pub snapshot: Snapshot,
    pub outcome: Option<Outcome>,
}

/// Pushed to event-stream subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Turn { index: usize, turn: DialogueTurn },
    Closed { dialogue: Dialogue },
}

enum SessionAgent {
    Rule(RuleAgent),
    Policy,
}

pub struct Session {
    pub id: String,
    pub agent_kind: AgentKind,
    pub config: NegotiationConfig,
    neg: Negotiation,
    transcript: Vec<DialogueTurn>,
    agent: SessionAgent,
    rng: ChaCha8Rng,
    created_at: SystemTime,
    pub last_active: Instant,
    closed: Option<Dialogue>,
    events: broadcast::Sender<SessionEvent>,
}

impl Session {
    pub fn new(shared: &Shared, id: String, req: &CreateSession, seed: u64) -> Result<Self, ServiceError> {
        let bundle = shared
            .catalog
            .bundle(&req.bundle_id)
            .map_err(|_| ServiceError::UnknownBundle(req.bundle_id.clone()))?;
        let config = req.config.apply(&shared.flow.negotiation)?;
        let (agent, agent_kind) = match req.agent {
            AgentRequest::Rule => (
                SessionAgent::Rule(RuleAgent::new(shared.flow.table())),
                AgentKind::RuleBased,
            ),
            AgentRequest::Policy => {
                let p = shared
                    .policy
                    .as_ref()
                    .ok_or_else(|| ServiceError::BadConfig("no policy is loaded".into()))?;
                (SessionAgent::Policy, AgentKind::Policy { version: p.version })
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flow = shared.flow.clone();
        flow.negotiation = config.clone();
        let setup = sample_setup(&bundle, &flow, &mut rng);
        let mut neg = Negotiation::new(bundle, setup, &config)
            .map_err(|e| ServiceError::BadConfig(e.to_string()))?;
        neg.id = id.clone();
        Ok(Session {
            id,
            agent_kind,
            config,
            neg,
            transcript: Vec::new(),
            agent,
            rng,
            created_at: SystemTime::now(),
            last_active: Instant::now(),
            closed: None,
            events: broadcast::channel(EVENT_BUFFER).0,
        })
    }

    pub fn is_closed(&self) -> bool {
        self.closed.is_some()
    }

    pub fn closed_dialogue(&self) -> Option<&Dialogue> {
        self.closed.as_ref()
    }

    pub fn transcript(&self) -> &[DialogueTurn] {
        &self.transcript
    }

    pub fn subscribe(&self) -> broadcast::Receiver<SessionEvent> {
        self.events.subscribe()
    }

    pub fn snapshot(&self) -> Snapshot {
        let s = &self.neg.state;
        Snapshot {
            status: s.status,
            closed: self.is_closed(),
            list_price: s.bundle.price(),
            seller_price: s.seller_price,
            buyer_price: self.neg.offer(),
            active: s.bundle.active.clone(),
            turns: self.transcript.len(),
            awaiting: (!self.is_closed()).then(|| self.neg.next_speaker()),
        }
    }

    pub fn descriptor(&self) -> SessionDescriptor {
        SessionDescriptor {
            session_id: self.id.clone(),
            agent: self.agent_kind.clone(),
            config: self.config.clone(),
            bundle: self.neg.initial_bundle.clone(),
            snapshot: self.snapshot(),
        }
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            agent: self.agent_kind.clone(),
            created_at: self
                .created_at
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            bundle: self.neg.initial_bundle.clone(),
            transcript: self.transcript.clone(),
            snapshot: self.snapshot(),
            outcome: self.closed.as_ref().map(|d| d.outcome),
        }
    }

    /// Applies a customer turn and, unless it ended the dialogue, the
    /// agent's reply. Returns the dialogue as well when it just closed.
    pub fn customer_turn(
        &mut self,
        shared: &Shared,
        req: TurnRequest,
    ) -> Result<(TurnResponse, Option<Dialogue>), ServiceError> {
        if self.is_closed() {
            return Err(ServiceError::SessionClosed(self.id.clone()));
        }
        self.last_active = Instant::now();
        let (action, text, confidence) = match (req.text, req.structured) {
            (Some(text), None) => {
                let (action, confidence) = self.interpret(shared, &text)?;
                (action, Some(text), Some(confidence))
            }
            (None, Some(s)) => {
                if s.ops.len() > 1 {
                    return Err(ServiceError::IllegalIntent("at most one bundle op per turn".into()));
                }
                let action = CustomerAction {
                    intent: s.intent.resolve()?,
                    offer: s.price_offer,
                    op: s.ops.into_iter().next(),
                };
                (action, s.text, None)
            }
            _ => {
                return Err(ServiceError::BadRequest(
                    "send exactly one of `text` or `structured`".into(),
                ))
            }
        };

        let mut next = self.neg.clone();
        let applied = next.customer_turn(action).map(|_| ()).and_then(|()| {
            // the agent must have an answer before the turn is committed
            if next.finished() {
                Ok(())
            } else {
                next.legal_agent_moves().map(|_| ())
            }
        });
        if let Err(e) = applied {
            return Err(match e {
                FlowError::ClosedDeal => ServiceError::SessionClosed(self.id.clone()),
                other => ServiceError::IllegalIntent(other.to_string()),
            });
        }
        self.neg = next;
        let customer_turn = self.record_last(shared, text);

        let mut agent_turn = None;
        if !self.neg.finished() {
            let step = match &mut self.agent {
                SessionAgent::Rule(a) => self.neg.agent_turn(a, &mut self.rng),
                SessionAgent::Policy => {
                    let policy = shared.policy.as_ref().expect("checked at creation");
                    self.neg.agent_turn(&mut PolicyAgent::new(policy), &mut self.rng)
                }
            };
            step.map_err(|e| ServiceError::Internal(format!("agent failed: {e}")))?;
            agent_turn = Some(self.record_last(shared, None));
        }

        let finished = self.neg.finished().then(|| {
            let outcome = self.neg.outcome.unwrap_or_else(Outcome::rejected);
            self.finish(outcome)
        });
        Ok((
            TurnResponse {
                customer_turn,
                agent_turn,
                confidence,
                snapshot: self.snapshot(),
                outcome: finished.as_ref().map(|d| d.outcome),
            },
            finished,
        ))
    }

    /// Closes the session. An open negotiation is abandoned: the customer
    /// walks away with a rejection. The flag is true on the first close of
    /// a session with turns, i.e. when the dialogue should be persisted.
    pub fn close(&mut self, shared: &Shared) -> (Dialogue, bool) {
        if let Some(d) = &self.closed {
            return (d.clone(), false);
        }
        self.last_active = Instant::now();
        if self.transcript.is_empty() {
            let d = self.finish(Outcome::rejected());
            return (d, false);
        }
        let mut turn = SkeletonTurn {
            speaker: Speaker::Customer,
            intent: intent!(Reject),
            price_offer: None,
            bundle_ops: Vec::new(),
            info_slots: BTreeMap::new(),
        };
        let main = self.neg.state.bundle.main();
        turn.info_slots.insert("product".into(), main.name.clone());
        turn.info_slots.insert("asking".into(), self.neg.state.seller_price.to_string());
        let text = shared
            .templates
            .realize(&turn, &mut self.rng)
            .unwrap_or_else(|_| "No thanks.".into());
        self.push(DialogueTurn {
            speaker: turn.speaker,
            intent: turn.intent,
            text,
            price_offer: None,
            bundle_ops: Vec::new(),
        });
        (self.finish(Outcome::rejected()), true)
    }

    fn finish(&mut self, outcome: Outcome) -> Dialogue {
        let d = Dialogue {
            id: self.id.clone(),
            bundle: self.neg.initial_bundle.clone(),
            turns: self.transcript.clone(),
            outcome,
        };
        self.closed = Some(d.clone());
        let _ = self.events.send(SessionEvent::Closed { dialogue: d.clone() });
        d
    }

    /// Realizes the engine's latest turn and appends it to the transcript.
    fn record_last(&mut self, shared: &Shared, text: Option<String>) -> DialogueTurn {
        let sk = self.neg.turns.last().expect("a turn was just applied");
        let text = match text {
            Some(t) => t,
            None => shared
                .templates
                .realize(sk, &mut self.rng)
                .unwrap_or_else(|_| sk.intent.name()),
        };
        let turn = DialogueTurn {
            speaker: sk.speaker,
            intent: sk.intent.clone(),
            text,
            price_offer: sk.price_offer,
            bundle_ops: sk.bundle_ops.clone(),
        };
        self.push(turn.clone());
        turn
    }

    fn push(&mut self, turn: DialogueTurn) {
        let index = self.transcript.len();
        self.transcript.push(turn.clone());
        let _ = self.events.send(SessionEvent::Turn { index, turn });
    }

    /// Maps free text to a customer action through the intent classifier.
    fn interpret(&self, shared: &Shared, text: &str) -> Result<(CustomerAction, f64), ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::BadRequest("empty text".into()));
        }
        let probs = shared.classifier.predict_proba(text);
        let (intent, confidence) = shared
            .classifier
            .classes()
            .iter()
            .zip(probs)
            .filter(|(c, _)| shared.customer_intents.contains(c))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, p)| (c.clone(), p))
            .ok_or_else(|| ServiceError::Internal("classifier has no customer intents".into()))?;
        if confidence < shared.confidence_threshold {
            return Err(ServiceError::LowConfidence {
                intent: intent.name(),
                confidence,
            });
        }
        let intent = if self.transcript.is_empty() {
            intent.with_greet().unwrap_or(intent)
        } else {
            intent
        };
        let offer = if intent.contains(IntentAtom::NegotiatePriceDecrease) {
            Some(extract_price(text).ok_or_else(|| {
                ServiceError::IllegalIntent(format!("{intent} needs a price in the text"))
            })?)
        } else {
            None
        };
        let op = if intent.has_bundle_op() {
            Some(find_item(&self.neg.state.bundle, &intent, text).ok_or_else(|| {
                ServiceError::IllegalIntent(format!("{intent} needs an item the bundle can change"))
            })?)
        } else {
            None
        };
        Ok((CustomerAction { intent, offer, op }, confidence))
    }
}

/// The first number in `text`; thousands separators are allowed.
pub fn extract_price(text: &str) -> Option<Price> {
    let mut digits = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_ascii_digit() {
            digits.push(c);
        } else if c == ',' && !digits.is_empty() && chars.peek().is_some_and(|n| n.is_ascii_digit()) {
            continue;
        } else if !digits.is_empty() {
            break;
        }
    }
    digits.parse().ok().filter(|v| *v > 0).map(Price)
}

/// The bundle item named in `text` that the intent's op can apply to.
pub fn find_item(bundle: &Bundle, intent: &CompositeIntent, text: &str) -> Option<BundleOp> {
    let lower = text.to_lowercase();
    let mentioned = |name: &str, id: &str| lower.contains(&name.to_lowercase()) || lower.contains(&id.to_lowercase());
    if intent.contains(IntentAtom::NegotiateRemoveX) {
        bundle
            .removable()
            .find(|p| mentioned(&p.name, &p.id))
            .map(|p| BundleOp::Remove(p.id.clone()))
    } else {
        bundle
            .addable()
            .find(|p| mentioned(&p.name, &p.id))
            .map(|p| BundleOp::Add(p.id.clone()))
    }
}
