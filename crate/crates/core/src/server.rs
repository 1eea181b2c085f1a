//! HTTP API over the engine.
//!
//! Each session sits behind its own async mutex. A message that finds the
//! mutex held gets 409 rather than queueing, and engine work (which may call
//! a slow agent backend) runs on the blocking pool so other sessions proceed.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;

use crate::agent::AgentBackend;
use crate::engine::{self, BotPrompt, EngineError, RespondentInput, Session};
use crate::questionnaire::{Condition, Questionnaire};
use crate::store::Store;
use crate::transcript::{SessionStatus, Timestamp};

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

#[derive(Debug, Clone, Default, Deserialize)]
pub struct CreateSession {
    pub condition: Option<Condition>,
    /// Questionnaire id; the default questionnaire when omitted.
    pub questionnaire: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub condition: Condition,
    pub first_prompt: BotPrompt,
    pub typing_delay_ms: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PostMessage {
    pub input: RespondentInput,
    pub idempotency_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageReply {
    pub bot_prompt: Option<BotPrompt>,
    pub finished: bool,
    pub status: SessionStatus,
    pub typing_delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// A finished HTTP reply, kept verbatim for idempotent replay.
#[derive(Debug, Clone)]
struct Reply {
    status: StatusCode,
    body: Bytes,
}

impl Reply {
    fn json(status: StatusCode, value: &impl Serialize) -> Self {
        Self { status, body: Bytes::from(serde_json::to_vec(value).expect("reply serializes")) }
    }

    fn error(status: StatusCode, message: impl Into<String>) -> Self {
        Self::json(status, &ErrorBody { error: message.into() })
    }
}

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        (self.status, [(header::CONTENT_TYPE, "application/json")], self.body).into_response()
    }
}

struct Slot {
    session: Session,
    questionnaire: Arc<Questionnaire>,
    replies: HashMap<String, Reply>,
}

/// Block randomization over the enabled conditions: every consecutive block
/// of k assignments uses each condition once.
struct Assigner {
    rng: ChaCha8Rng,
    block: Vec<Condition>,
}

impl Assigner {
    fn next(&mut self, conditions: &[Condition]) -> Condition {
        if self.block.is_empty() {
            self.block = conditions.to_vec();
            self.block.shuffle(&mut self.rng);
        }
        self.block.pop().expect("at least one condition")
    }
}

pub struct AppState {
    questionnaires: BTreeMap<String, Arc<Questionnaire>>,
    default_questionnaire: String,
    agent: Arc<dyn AgentBackend>,
    store: Arc<Store>,
    timeout: Duration,
    typing_delay_ms: u64,
    clock: Clock,
    sessions: Mutex<HashMap<String, Arc<AsyncMutex<Slot>>>>,
    assigner: Mutex<Assigner>,
}

pub struct AppStateBuilder {
    questionnaires: Vec<Questionnaire>,
    agent: Arc<dyn AgentBackend>,
    store: Arc<Store>,
    timeout: Duration,
    typing_delay_ms: u64,
    clock: Clock,
    assignment_seed: Option<u64>,
}

impl AppStateBuilder {
    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn typing_delay_ms(mut self, ms: u64) -> Self {
        self.typing_delay_ms = ms;
        self
    }

    pub fn clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn questionnaire(mut self, q: Questionnaire) -> Self {
        self.questionnaires.push(q);
        self
    }

    /// Fix the condition-assignment stream (tests).
    pub fn assignment_seed(mut self, seed: u64) -> Self {
        self.assignment_seed = Some(seed);
        self
    }

    pub fn build(self) -> Arc<AppState> {
        let default_questionnaire = self.questionnaires[0].id.clone();
        let seed = self.assignment_seed.unwrap_or_else(|| rand::rng().random());
        Arc::new(AppState {
            questionnaires: self.questionnaires.into_iter().map(|q| (q.id.clone(), Arc::new(q))).collect(),
            default_questionnaire,
            agent: self.agent,
            store: self.store,
            timeout: self.timeout,
            typing_delay_ms: self.typing_delay_ms,
            clock: self.clock,
            sessions: Mutex::new(HashMap::new()),
            assigner: Mutex::new(Assigner { rng: ChaCha8Rng::seed_from_u64(seed), block: Vec::new() }),
        })
    }
}

impl AppState {
    /// `questionnaire` is the default for sessions that do not name one.
    pub fn builder(questionnaire: Questionnaire, agent: Arc<dyn AgentBackend>, store: Arc<Store>) -> AppStateBuilder {
        AppStateBuilder {
            questionnaires: vec![questionnaire],
            agent,
            store,
            timeout: engine::DEFAULT_DROPOUT_TIMEOUT,
            typing_delay_ms: 0,
            clock: Arc::new(Timestamp::now),
            assignment_seed: None,
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    fn slot(&self, id: &str) -> Option<Arc<AsyncMutex<Slot>>> {
        self.sessions.lock().expect("session map lock").get(id).cloned()
    }

    /// Expire idle sessions and persist their status change. Sessions busy
    /// with a message are skipped. Returns how many expired.
    pub async fn sweep_expired(self: &Arc<Self>) -> usize {
        let slots: Vec<_> = self.sessions.lock().expect("session map lock").values().cloned().collect();
        let mut expired = 0;
        for slot in slots {
            let Ok(mut guard) = slot.try_lock_owned() else {
                continue;
            };
            let state = Arc::clone(self);
            let changed = tokio::task::spawn_blocking(move || {
                let slot = &mut *guard;
                if !engine::expire_session(&mut slot.session, (state.clock)(), state.timeout) {
                    return false;
                }
                let records = slot.session.drain_records();
                if let Err(e) = state.store.append_all(&records) {
                    tracing::error!(session = %slot.session.id, error = %e, "persisting expiry failed");
                }
                true
            })
            .await
            .unwrap_or(false);
            expired += changed as usize;
        }
        expired
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .with_state(state)
}

fn new_token() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Reply {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return Reply::error(StatusCode::BAD_REQUEST, e.to_string()),
        }
    };
    let qid = req.questionnaire.unwrap_or_else(|| state.default_questionnaire.clone());
    let Some(q) = state.questionnaires.get(&qid).cloned() else {
        return Reply::error(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown questionnaire `{qid}`"));
    };
    let condition = match req.condition {
        Some(c) => c,
        None => {
            let enabled: Vec<Condition> = q.conditions.iter().copied().collect();
            state.assigner.lock().expect("assigner lock").next(&enabled)
        }
    };
    let seed = req.seed.unwrap_or_else(|| rand::rng().random());
    let token = new_token();
    let now = (state.clock)();
    let (mut session, step) = match engine::start_session(&q, condition, &token, seed, now) {
        Ok(s) => s,
        Err(e) => return Reply::error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    engine::rename_session(&mut session, &token);
    let records = session.drain_records();
    let store = Arc::clone(&state.store);
    match tokio::task::spawn_blocking(move || store.append_all(&records)).await {
        Ok(Ok(())) => {}
        Ok(Err(e)) => return Reply::error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => return Reply::error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
    let first_prompt = step.bot_output.expect("a new session always prompts");
    state
        .sessions
        .lock()
        .expect("session map lock")
        .insert(token.clone(), Arc::new(AsyncMutex::new(Slot { session, questionnaire: q, replies: HashMap::new() })));
    tracing::info!(session = %token, %condition, "session created");
    Reply::json(
        StatusCode::CREATED,
        &SessionCreated { session_id: token, condition, first_prompt, typing_delay_ms: state.typing_delay_ms },
    )
}

async fn post_message(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Reply {
    let Some(slot) = state.slot(&id) else {
        return Reply::error(StatusCode::NOT_FOUND, format!("unknown session `{id}`"));
    };
    let req: PostMessage = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return Reply::error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    let Ok(mut guard) = slot.try_lock_owned() else {
        return Reply::error(StatusCode::CONFLICT, "another message for this session is in flight");
    };
    if let Some(cached) = guard.replies.get(&req.idempotency_key) {
        return cached.clone();
    }
    let state2 = Arc::clone(&state);
    let handled = tokio::task::spawn_blocking(move || {
        let slot = &mut *guard;
        let now = (state2.clock)();
        let reply = handle_message(&state2, slot, req.input, now);
        slot.replies.insert(req.idempotency_key, reply.clone());
        reply
    })
    .await;
    handled.unwrap_or_else(|e| Reply::error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

fn handle_message(state: &AppState, slot: &mut Slot, input: RespondentInput, now: Timestamp) -> Reply {
    if !slot.session.is_active() {
        return Reply::error(StatusCode::GONE, format!("session is {}", status_name(slot.session.status)));
    }
    if engine::expire_session(&mut slot.session, now, state.timeout) {
        let records = slot.session.drain_records();
        if let Err(e) = state.store.append_all(&records) {
            return Reply::error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        }
        return Reply::error(StatusCode::GONE, "session expired");
    }
    let step = match engine::advance(&mut slot.session, &slot.questionnaire, input, state.agent.as_ref(), now) {
        Ok(step) => step,
        Err(EngineError::AffordanceMismatch(m)) => return Reply::error(StatusCode::UNPROCESSABLE_ENTITY, m),
        Err(EngineError::SessionNotActive) => return Reply::error(StatusCode::GONE, "session is not active"),
        Err(e) => return Reply::error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let records = slot.session.drain_records();
    if let Err(e) = state.store.append_all(&records) {
        return Reply::error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    Reply::json(
        StatusCode::OK,
        &MessageReply {
            bot_prompt: step.bot_output,
            finished: step.finished,
            status: step.status,
            typing_delay_ms: state.typing_delay_ms,
        },
    )
}

fn status_name(s: SessionStatus) -> &'static str {
    match s {
        SessionStatus::Active => "active",
        SessionStatus::Completed => "completed",
        SessionStatus::DroppedOut => "dropped out",
        SessionStatus::Declined => "declined",
    }
}

async fn get_transcript(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    if state.slot(&id).is_none() {
        return Reply::error(StatusCode::NOT_FOUND, format!("unknown session `{id}`")).into_response();
    }
    let store = Arc::clone(&state.store);
    match tokio::task::spawn_blocking(move || store.session_jsonl(&id)).await {
        Ok(Ok(body)) => (StatusCode::OK, [(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response(),
        Ok(Err(e)) => Reply::error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
        Err(e) => Reply::error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Serve until ctrl-c, sweeping idle sessions every `sweep_every`.
pub async fn serve(state: Arc<AppState>, bind: &str, sweep_every: Duration) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let sweeper = {
        let state = Arc::clone(&state);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(sweep_every.max(Duration::from_secs(1)));
            loop {
                tick.tick().await;
                let n = state.sweep_expired().await;
                if n > 0 {
                    tracing::info!(expired = n, "swept idle sessions");
                }
            }
        })
    };
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweeper.abort();
    result
}
