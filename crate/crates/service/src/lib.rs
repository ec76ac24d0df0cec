//! HTTP front end for live negotiations.
//!
//! A client plays the customer; the server answers with the rule-based or
//! a trained agent. Turns can be structured (intent, offer, bundle op) or
//! free text, which goes through the intent classifier. Each session also
//! streams its turns as server-sent events.

use std::collections::HashMap;
use std::convert::Infallible;
use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, TryLockError};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use bundlebargain::corpus::append_corpus;
use bundlebargain::policy::PolicyParams;
use bundlebargain::realize::TemplateLibrary;
use bundlebargain::reward::{train_classifier, ClassifierConfig, IntentClassifier};
use bundlebargain::sim::training_pairs;
use bundlebargain::{Bundle, Catalog, CompositeIntent, Dialogue, Speaker};
use bundlebargain::flow::FlowConfig;
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use tokio::sync::broadcast;

mod error;
mod session;

pub use error::{ErrorBody, ServiceError};
pub use session::{
    extract_price, find_item, AgentKind, AgentRequest, ConfigOverrides, CreateSession, IntentSpec,
    Session, SessionDescriptor, SessionEvent, SessionView, Snapshot, StructuredTurn, TurnRequest,
    TurnResponse,
};

pub const DEFAULT_EXPIRY: Duration = Duration::from_secs(30 * 60);
pub const DEFAULT_CONFIDENCE: f64 = 0.4;

/// Read-only state shared by every session.
pub struct Shared {
    pub catalog: Catalog,
    pub flow: FlowConfig,
    pub templates: TemplateLibrary,
    pub classifier: IntentClassifier,
    /// Classifier classes a customer may use.
    pub customer_intents: Vec<CompositeIntent>,
    pub policy: Option<PolicyParams>,
    pub confidence_threshold: f64,
}

pub struct ServiceConfig {
    pub catalog: Catalog,
    pub flow: FlowConfig,
    pub templates: TemplateLibrary,
    pub classifier: IntentClassifier,
    pub policy: Option<PolicyParams>,
    /// JSON-lines file that closed dialogues are appended to.
    pub store: Option<PathBuf>,
    pub expiry: Duration,
    pub confidence_threshold: f64,
    /// Base seed for sessions created without one. `None` draws from entropy.
    pub seed: Option<u64>,
}

impl ServiceConfig {
    /// Builtin templates and a classifier trained on 5000 realized pairs.
    pub fn standard(catalog: Catalog, flow: FlowConfig, seed: u64) -> Result<Self, String> {
        let templates = TemplateLibrary::builtin();
        let pairs = training_pairs(&catalog, &flow, &templates, 5000, seed).map_err(|e| e.to_string())?;
        let cfg = ClassifierConfig {
            seed,
            drop_rare: true,
            ..ClassifierConfig::default()
        };
        let (classifier, report) = train_classifier(&pairs, &cfg).map_err(|e| e.to_string())?;
        tracing::info!(accuracy = report.heldout_accuracy, "intent classifier trained");
        Ok(Self::standard_with(catalog, flow, classifier))
    }

    /// Builtin templates and the given classifier.
    pub fn standard_with(catalog: Catalog, flow: FlowConfig, classifier: IntentClassifier) -> Self {
        ServiceConfig {
            catalog,
            flow,
            templates: TemplateLibrary::builtin(),
            classifier,
            policy: None,
            store: None,
            expiry: DEFAULT_EXPIRY,
            confidence_threshold: DEFAULT_CONFIDENCE,
            seed: None,
        }
    }
}

type SessionRef = Arc<Mutex<Session>>;

struct Inner {
    shared: Shared,
    sessions: Mutex<HashMap<String, SessionRef>>,
    store: Option<PathBuf>,
    expiry: Duration,
    seed: Option<u64>,
    counter: AtomicU64,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        let customer_intents = cfg
            .templates
            .keys()
            .filter(|(s, _)| *s == Speaker::Customer)
            .map(|(_, i)| i.clone())
            .filter(|i| cfg.classifier.classes().contains(i))
            .collect();
        AppState {
            inner: Arc::new(Inner {
                shared: Shared {
                    catalog: cfg.catalog,
                    flow: cfg.flow,
                    templates: cfg.templates,
                    classifier: cfg.classifier,
                    customer_intents,
                    policy: cfg.policy,
                    confidence_threshold: cfg.confidence_threshold,
                },
                sessions: Mutex::new(HashMap::new()),
                store: cfg.store,
                expiry: cfg.expiry,
                seed: cfg.seed,
                counter: AtomicU64::new(0),
            }),
        }
    }

    pub fn shared(&self) -> &Shared {
        &self.inner.shared
    }

    pub fn session_count(&self) -> usize {
        lock(&self.inner.sessions).len()
    }

    fn session(&self, id: &str) -> Result<SessionRef, ServiceError> {
        lock(&self.inner.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn create(&self, req: &CreateSession) -> Result<SessionDescriptor, ServiceError> {
        let n = self.inner.counter.fetch_add(1, Ordering::Relaxed);
        let seed = req.seed.unwrap_or_else(|| match self.inner.seed {
            Some(base) => base.wrapping_add(n),
            None => rand::random(),
        });
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::new(&self.inner.shared, id.clone(), req, seed)?;
        let desc = session.descriptor();
        lock(&self.inner.sessions).insert(id, Arc::new(Mutex::new(session)));
        Ok(desc)
    }

    pub async fn turn(&self, id: &str, req: TurnRequest) -> Result<TurnResponse, ServiceError> {
        let s = self.session(id)?;
        let (resp, done) = {
            let mut guard = match s.try_lock() {
                Ok(g) => g,
                Err(TryLockError::Poisoned(e)) => e.into_inner(),
                Err(TryLockError::WouldBlock) => return Err(ServiceError::TurnInProgress),
            };
            guard.customer_turn(&self.inner.shared, req)?
        };
        if let Some(d) = done {
            self.persist(d).await;
        }
        Ok(resp)
    }

    pub fn view(&self, id: &str) -> Result<SessionView, ServiceError> {
        let s = self.session(id)?;
        let view = lock(&s).view();
        Ok(view)
    }

    pub async fn close(&self, id: &str) -> Result<Dialogue, ServiceError> {
        let s = self.session(id)?;
        let (d, fresh) = lock(&s).close(&self.inner.shared);
        if fresh {
            self.persist(d.clone()).await;
        }
        Ok(d)
    }

    /// Closes every open session, persisting abandoned ones.
    pub async fn close_all(&self) -> usize {
        let all: Vec<SessionRef> = lock(&self.inner.sessions).values().cloned().collect();
        let mut closed = 0;
        for s in all {
            let (d, fresh) = lock(&s).close(&self.inner.shared);
            if fresh {
                self.persist(d).await;
                closed += 1;
            }
        }
        closed
    }

    /// Closes sessions idle longer than the expiry and forgets closed ones
    /// idle that long. Returns the number of sessions closed.
    pub async fn sweep(&self, now: Instant) -> usize {
        let expiry = self.inner.expiry;
        let idle = |s: &Session| now.saturating_duration_since(s.last_active) >= expiry;
        let all: Vec<(String, SessionRef)> = lock(&self.inner.sessions)
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut closed = 0;
        let mut forget = Vec::new();
        for (id, s) in all {
            let fresh = {
                let mut guard = lock(&s);
                if !idle(&guard) {
                    continue;
                }
                if guard.is_closed() {
                    forget.push(id);
                    continue;
                }
                closed += 1;
                guard.close(&self.inner.shared)
            };
            if let (d, true) = fresh {
                self.persist(d).await;
            }
        }
        let mut map = lock(&self.inner.sessions);
        for id in forget {
            map.remove(&id);
        }
        closed
    }

    async fn persist(&self, d: Dialogue) {
        let Some(path) = self.inner.store.clone() else {
            return;
        };
        let id = d.id.clone();
        let res = tokio::task::spawn_blocking(move || append_corpus(&[d], &path)).await;
        match res {
            Ok(Ok(())) => tracing::debug!(session = %id, "dialogue persisted"),
            Ok(Err(e)) => tracing::error!(session = %id, error = %e, "persisting dialogue failed"),
            Err(e) => tracing::error!(session = %id, error = %e, "persist task failed"),
        }
    }

    fn events(
        &self,
        id: &str,
        after: Option<usize>,
    ) -> Result<impl Stream<Item = SessionEvent> + Send + 'static, ServiceError> {
        let s = self.session(id)?;
        let guard = lock(&s);
        let rx = guard.subscribe();
        let from = after.map_or(0, |i| i + 1);
        let mut replay: Vec<SessionEvent> = guard
            .transcript()
            .iter()
            .enumerate()
            .skip(from)
            .map(|(index, turn)| SessionEvent::Turn {
                index,
                turn: turn.clone(),
            })
            .collect();
        let done = guard.closed_dialogue().cloned();
        drop(guard);
        let live = match done {
            Some(dialogue) => {
                replay.push(SessionEvent::Closed { dialogue });
                stream::empty().boxed()
            }
            None => live_events(rx).boxed(),
        };
        Ok(stream::iter(replay).chain(live))
    }
}

/// Forwards events until the session closes. A lagging subscriber is cut
/// off and expected to reconnect with `Last-Event-ID`.
fn live_events(rx: broadcast::Receiver<SessionEvent>) -> impl Stream<Item = SessionEvent> {
    stream::unfold(Some(rx), |rx| async move {
        let mut rx = rx?;
        match rx.recv().await {
            Ok(ev @ SessionEvent::Closed { .. }) => Some((ev, None)),
            Ok(ev) => Some((ev, Some(rx))),
            Err(_) => None,
        }
    })
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

async fn health(State(app): State<AppState>) -> impl IntoResponse {
    Json(serde_json::json!({"status": "ok", "sessions": app.session_count()}))
}

async fn bundles(State(app): State<AppState>) -> Json<Vec<Bundle>> {
    Json(app.shared().catalog.bundles())
}

async fn create(State(app): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let req: CreateSession = parse(&body)?;
    Ok((StatusCode::CREATED, Json(app.create(&req)?)))
}

async fn post_turn(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TurnResponse>, ServiceError> {
    let req: TurnRequest = parse(&body)?;
    Ok(Json(app.turn(&id, req).await?))
}

async fn get_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(app.view(&id)?))
}

async fn delete_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Dialogue>, ServiceError> {
    Ok(Json(app.close(&id).await?))
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ServiceError> {
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok());
    let stream = app.events(&id, after)?.map(|ev| {
        let event = match &ev {
            SessionEvent::Turn { index, turn } => Event::default()
                .event("turn")
                .id(index.to_string())
                .json_data(turn),
            SessionEvent::Closed { dialogue } => Event::default().event("closed").json_data(dialogue),
        };
        Ok::<_, Infallible>(event.expect("event serializes"))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/bundles", get(bundles))
        .route("/sessions", axum::routing::post(create))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/turns", axum::routing::post(post_turn))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then closes and persists every open
/// session. Idle sessions are swept once a minute.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                let n = state.sweep(Instant::now()).await;
                if n > 0 {
                    tracing::info!(sessions = n, "expired idle sessions");
                }
            }
        })
    };
    let closer = state.clone();
    let shutdown = async move {
        shutdown.await;
        // closing ends every event stream, so the graceful drain can finish
        let n = closer.close_all().await;
        tracing::info!(sessions = n, "closed open sessions on shutdown");
    };
    let res = axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    state.close_all().await;
    res
}
