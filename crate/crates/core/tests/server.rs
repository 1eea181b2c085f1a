mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use convoprobe::agent::{AgentBackend, AgentError, Coding, ProbeDecision, ProbeKind, QuestionContext, Tone};
use convoprobe::engine::{rename_session, BotPrompt};
use convoprobe::server::{router, AppState, MessageReply, SessionCreated};
use convoprobe::store::{encode_line, Store};
use convoprobe::transcript::{RecordBody, SessionStatus};
use convoprobe::*;

struct ManualClock(AtomicI64);

impl ManualClock {
    fn new() -> Arc<Self> {
        Arc::new(Self(AtomicI64::new(common::T0.millis())))
    }

    fn advance(&self, ms: i64) -> Timestamp {
        Timestamp::from_millis(self.0.fetch_add(ms, Ordering::SeqCst) + ms)
    }

    fn now(&self) -> Timestamp {
        Timestamp::from_millis(self.0.load(Ordering::SeqCst))
    }
}

struct Harness {
    app: Router,
    store: Arc<Store>,
    clock: Arc<ManualClock>,
}

fn harness_with(agent: Arc<dyn AgentBackend>) -> Harness {
    let store = Arc::new(Store::in_memory());
    let clock = ManualClock::new();
    let c = Arc::clone(&clock);
    let state = AppState::builder(builtin_study(), agent, Arc::clone(&store))
        .timeout(Duration::from_secs(600))
        .clock(Arc::new(move || c.now()))
        .assignment_seed(3)
        .build();
    Harness { app: router(state), store, clock }
}

fn harness() -> Harness {
    harness_with(Arc::new(ReferenceBackend::default()))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn create(app: &Router, body: Value) -> SessionCreated {
    let (status, bytes) = send(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

async fn message(app: &Router, id: &str, input: &RespondentInput, key: &str) -> (StatusCode, Vec<u8>) {
    let body = json!({ "input": input, "idempotency_key": key });
    send(app, "POST", &format!("/sessions/{id}/messages"), Some(body)).await
}

fn error_text(bytes: &[u8]) -> String {
    serde_json::from_slice::<Value>(bytes).unwrap()["error"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn healthz() {
    let h = harness();
    let (status, body) = send(&h.app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"ok");
}

#[tokio::test]
async fn consent_then_first_question() {
    let h = harness();
    let s = create(&h.app, json!({ "condition": "t1", "seed": 5 })).await;
    assert_eq!(s.first_prompt.question_id, "Q0");
    assert_eq!(s.session_id.len(), 32);
    let (status, bytes) = message(&h.app, &s.session_id, &RespondentInput::YesNo { value: true }, "k1").await;
    assert_eq!(status, StatusCode::OK);
    let reply: MessageReply = serde_json::from_slice(&bytes).unwrap();
    let prompt = reply.bot_prompt.unwrap();
    assert_eq!(prompt.question_id, "Q1");
    assert!(!reply.finished);
}

#[tokio::test]
async fn idempotent_replay() {
    let h = harness();
    let s = create(&h.app, json!({ "condition": "control", "seed": 1 })).await;
    let yes = RespondentInput::YesNo { value: true };
    let first = message(&h.app, &s.session_id, &yes, "same").await;
    let stored = h.store.load_all().unwrap().records.len();
    let again = message(&h.app, &s.session_id, &yes, "same").await;
    assert_eq!(first, again);
    assert_eq!(h.store.load_all().unwrap().records.len(), stored);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let h = harness();
    let (status, _) = message(&h.app, "nope", &RespondentInput::YesNo { value: true }, "k").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&h.app, "GET", "/sessions/nope/transcript", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn wrong_affordance_is_422() {
    let h = harness();
    let s = create(&h.app, json!({ "condition": "control", "seed": 1 })).await;
    let (status, bytes) = message(&h.app, &s.session_id, &RespondentInput::Likert { value: 2 }, "k").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{}", error_text(&bytes));
    // The session still waits on consent.
    let (status, _) = message(&h.app, &s.session_id, &RespondentInput::YesNo { value: true }, "k2").await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn unknown_questionnaire_is_422() {
    let h = harness();
    let (status, _) = send(&h.app, "POST", "/sessions", Some(json!({ "questionnaire": "other" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn expired_session_is_410_and_recorded() {
    let h = harness();
    let s = create(&h.app, json!({ "condition": "t2", "seed": 9 })).await;
    h.clock.advance(601_000);
    let (status, _) = message(&h.app, &s.session_id, &RespondentInput::YesNo { value: true }, "late").await;
    assert_eq!(status, StatusCode::GONE);
    let records = h.store.load_session(&s.session_id).unwrap();
    let last = records.last().unwrap();
    assert!(matches!(&last.body, RecordBody::StatusChange(c) if c.status == SessionStatus::DroppedOut));
    // Still gone on a fresh key.
    let (status, _) = message(&h.app, &s.session_id, &RespondentInput::YesNo { value: true }, "later").await;
    assert_eq!(status, StatusCode::GONE);
}

#[tokio::test]
async fn sweeper_expires_idle_sessions() {
    let store = Arc::new(Store::in_memory());
    let clock = ManualClock::new();
    let c = Arc::clone(&clock);
    let state = AppState::builder(builtin_study(), Arc::new(ReferenceBackend::default()), Arc::clone(&store))
        .timeout(Duration::from_secs(60))
        .clock(Arc::new(move || c.now()))
        .build();
    let app = router(Arc::clone(&state));
    let s = create(&app, json!({})).await;
    assert_eq!(state.sweep_expired().await, 0);
    clock.advance(61_000);
    assert_eq!(state.sweep_expired().await, 1);
    let t = store.transcripts().unwrap();
    assert_eq!(t[0].session_id, s.session_id);
    assert_eq!(t[0].status, SessionStatus::DroppedOut);
}

#[tokio::test]
async fn finished_session_is_410() {
    let h = harness();
    let s = create(&h.app, json!({ "condition": "control", "seed": 2 })).await;
    let (status, bytes) = message(&h.app, &s.session_id, &RespondentInput::YesNo { value: false }, "no").await;
    assert_eq!(status, StatusCode::OK);
    let reply: MessageReply = serde_json::from_slice(&bytes).unwrap();
    assert!(reply.finished);
    assert_eq!(reply.status, SessionStatus::Declined);
    let (status, _) = message(&h.app, &s.session_id, &RespondentInput::YesNo { value: true }, "yes").await;
    assert_eq!(status, StatusCode::GONE);
}

#[tokio::test]
async fn omitted_condition_is_balanced() {
    let h = harness();
    let mut counts: BTreeMap<Condition, usize> = BTreeMap::new();
    for _ in 0..30 {
        *counts.entry(create(&h.app, json!({})).await.condition).or_default() += 1;
    }
    assert_eq!(counts.values().copied().collect::<Vec<_>>(), vec![10, 10, 10]);
}

#[tokio::test]
async fn server_transcript_equals_library_replay() {
    for condition in Condition::ALL {
        let h = harness();
        let q = builtin_study();
        let s = create(&h.app, json!({ "condition": condition, "seed": 77 })).await;
        let mut prompt: Option<BotPrompt> = Some(s.first_prompt.clone());
        let mut inputs = Vec::new();
        let mut i = 0;
        while let Some(p) = prompt {
            let input = common::scripted_input(&p);
            let at = h.clock.advance(20_000);
            let (status, bytes) = message(&h.app, &s.session_id, &input, &format!("k{i}")).await;
            assert_eq!(status, StatusCode::OK);
            inputs.push((input, at));
            prompt = serde_json::from_slice::<MessageReply>(&bytes).unwrap().bot_prompt;
            i += 1;
        }
        let (status, body) = send(&h.app, "GET", &format!("/sessions/{}/transcript", s.session_id), None).await;
        assert_eq!(status, StatusCode::OK);

        let agent = ReferenceBackend::default();
        let (mut session, _) = start_session(&q, condition, &s.session_id, 77, common::T0).unwrap();
        rename_session(&mut session, &s.session_id);
        for (input, at) in inputs {
            advance(&mut session, &q, input, &agent, at).unwrap();
        }
        let replay: String = session.drain_records().iter().map(|r| encode_line(r).unwrap() + "\n").collect();
        assert_eq!(String::from_utf8(body).unwrap(), replay, "{condition}");
    }
}

/// Reference agent that blocks while coding, to hold a message in flight.
struct SlowAgent(ReferenceBackend, Duration);

impl AgentBackend for SlowAgent {
    fn code_response(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Coding, AgentError> {
        std::thread::sleep(self.1);
        self.0.code_response(ctx, text)
    }

    fn classify_sentiment(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Tone, AgentError> {
        self.0.classify_sentiment(ctx, text)
    }

    fn decide_probe(
        &self,
        ctx: QuestionContext<'_>,
        seed_text: &str,
        allowed: &BTreeSet<ProbeKind>,
    ) -> Result<ProbeDecision, AgentError> {
        self.0.decide_probe(ctx, seed_text, allowed)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_message_is_409() {
    let h = harness_with(Arc::new(SlowAgent(ReferenceBackend::default(), Duration::from_millis(500))));
    let s = create(&h.app, json!({ "condition": "t1", "seed": 4 })).await;
    let (status, _) = message(&h.app, &s.session_id, &RespondentInput::YesNo { value: true }, "consent").await;
    assert_eq!(status, StatusCode::OK);

    let slow = {
        let app = h.app.clone();
        let id = s.session_id.clone();
        tokio::spawn(async move { message(&app, &id, &RespondentInput::text("inflation"), "q1").await })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (status, _) = message(&h.app, &s.session_id, &RespondentInput::text("crime"), "q1-other").await;
    assert_eq!(status, StatusCode::CONFLICT);

    // Another session is not blocked by the slow one.
    let other = create(&h.app, json!({ "condition": "control", "seed": 4 })).await;
    let (status, _) = message(&h.app, &other.session_id, &RespondentInput::YesNo { value: true }, "c").await;
    assert_eq!(status, StatusCode::OK);

    let (status, _) = slow.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    let answers = h
        .store
        .load_session(&s.session_id)
        .unwrap()
        .iter()
        .filter(|r| matches!(&r.body, RecordBody::Turn(t) if t.question_id == "Q1" && t.speaker == convoprobe::transcript::Speaker::Respondent))
        .count();
    assert_eq!(answers, 1);
}
