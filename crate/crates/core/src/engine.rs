//! Interview state machine.
//!
//! A [`Session`] walks the questionnaire in order. Each call to [`advance`]
//! consumes one respondent input and produces the next bot prompt, applying
//! the condition's probe policy:
//!
//! * control: record the answer and move on;
//! * confirmation arm: code open-ended answers, confirm one sampled category
//!   (yes/no) and fall back to the categorical list on denial or when nothing
//!   was coded; sentiment questions get a tone confirmation instead;
//! * elaboration/relevance arm: ask the agent for at most one probe per seed
//!   question.
//!
//! Every turn, coding, probe decision and status change is also queued as a
//! [`TranscriptRecord`] in the session outbox for persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    render_confirmation, AgentBackend, AgentError, Coding, ConfirmationOutcome, DetectedCategory, ProbeDecisionKind,
    ProbeKind, QuestionContext, Tone,
};
use crate::questionnaire::{Concept, Condition, Format, QuestionSpec, Questionnaire};
use crate::transcript::{
    ProbeRecord, RecordBody, SessionMeta, SessionStatus, Speaker, StatusChange, Timestamp, Transcript,
    TranscriptRecord, Turn, TurnKind, RECORD_VERSION,
};

pub const DEFAULT_DROPOUT_TIMEOUT: Duration = Duration::from_secs(30 * 60);
pub const CLOSING_MESSAGE: &str = "Thank you for completing this survey!";
pub const DECLINED_MESSAGE: &str = "Thank you for your time. The survey has ended.";
const REASK_PREFIX: &str = "Sorry, I didn't catch that.";
const YES_WORDS: [&str; 6] = ["yes", "y", "yeah", "yep", "correct", "right"];
const NO_WORDS: [&str; 5] = ["no", "n", "nope", "incorrect", "wrong"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitSeed,
    AwaitProbeAnswer,
    AwaitBinaryConfirm,
    AwaitCategoricalConfirm,
    Finished,
}

/// Input widget the respondent is expected to use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Affordance {
    FreeText,
    YesNo,
    ChoiceList { options: Vec<String> },
    Likert { labels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BotPrompt {
    pub question_id: String,
    pub kind: TurnKind,
    pub text: String,
    pub affordance: Affordance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RespondentInput {
    FreeText {
        text: String,
    },
    /// Zero-based option index.
    Choice {
        index: usize,
    },
    YesNo {
        value: bool,
    },
    /// One-based scale point.
    Likert {
        value: usize,
    },
}

impl RespondentInput {
    pub fn text(text: impl Into<String>) -> Self {
        RespondentInput::FreeText { text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStep {
    pub bot_output: Option<BotPrompt>,
    pub phase: Phase,
    pub cursor: usize,
    pub status: SessionStatus,
    pub finished: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("condition {0} is not part of this questionnaire")]
    UnsupportedCondition(Condition),
    #[error("session is not active")]
    SessionNotActive,
    #[error("input does not match the pending prompt: {0}")]
    AffordanceMismatch(String),
    #[error("session belongs to questionnaire `{expected}`, got `{got}`")]
    QuestionnaireMismatch { expected: String, got: String },
}

/// Live interview state. Serializable so a session can move between
/// processes; the RNG state travels with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub respondent_id: String,
    pub condition: Condition,
    pub questionnaire_id: String,
    pub rng_seed: u64,
    rng: ChaCha8Rng,
    pub cursor: usize,
    pub phase: Phase,
    pub status: SessionStatus,
    pub probe_used: BTreeMap<String, bool>,
    pub pending_coding: Option<Coding>,
    pub pending_prompt: Option<BotPrompt>,
    reask_used: bool,
    /// Closed and numeric answers by question id, used for branching.
    pub answers: BTreeMap<String, String>,
    pub last_answered: Option<String>,
    pub dropout_point: Option<String>,
    pub started_at: Timestamp,
    pub last_activity_at: Timestamp,
    pub turns: Vec<Turn>,
    pub codings: Vec<Coding>,
    pub probes: Vec<ProbeRecord>,
    next_record_seq: u64,
    outbox: Vec<TranscriptRecord>,
}

impl Session {
    pub fn is_active(&self) -> bool {
        self.status == SessionStatus::Active
    }

    /// Records produced since the last drain, in order.
    pub fn drain_records(&mut self) -> Vec<TranscriptRecord> {
        std::mem::take(&mut self.outbox)
    }

    pub fn pending_records(&self) -> &[TranscriptRecord] {
        &self.outbox
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            session_id: self.id.clone(),
            respondent_id: self.respondent_id.clone(),
            condition: self.condition,
            questionnaire_id: self.questionnaire_id.clone(),
            status: self.status,
            dropout_point: self.dropout_point.clone(),
            turns: self.turns.clone(),
            codings: self.codings.clone(),
            probes: self.probes.clone(),
        }
    }

    fn step(&self) -> EngineStep {
        EngineStep {
            bot_output: self.pending_prompt.clone(),
            phase: self.phase,
            cursor: self.cursor,
            status: self.status,
            finished: self.status.is_terminal(),
        }
    }

    fn record(&mut self, at: Timestamp, body: RecordBody) {
        self.next_record_seq += 1;
        self.outbox.push(TranscriptRecord {
            v: RECORD_VERSION,
            seq: self.next_record_seq,
            session_id: self.id.clone(),
            at,
            body,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn push_turn(
        &mut self,
        speaker: Speaker,
        question: &QuestionSpec,
        concept: Concept,
        kind: TurnKind,
        text: String,
        at: Timestamp,
        coding_snapshot: Option<Coding>,
    ) {
        let turn = Turn {
            seq: self.turns.len() as u64 + 1,
            speaker,
            question_id: question.id.clone(),
            concept,
            kind,
            text,
            at,
            coding_snapshot,
        };
        self.turns.push(turn.clone());
        self.record(at, RecordBody::Turn(turn));
    }

    fn prompt(&mut self, question: &QuestionSpec, kind: TurnKind, text: String, affordance: Affordance, at: Timestamp) {
        self.push_turn(Speaker::Bot, question, question.concept, kind, text.clone(), at, None);
        self.pending_prompt = Some(BotPrompt { question_id: question.id.clone(), kind, text, affordance });
    }

    fn system_note(&mut self, question: &QuestionSpec, note: String, at: Timestamp) {
        self.push_turn(Speaker::Bot, question, question.concept, TurnKind::System, note, at, None);
    }

    fn set_status(&mut self, status: SessionStatus, at: Timestamp) {
        self.status = status;
        self.phase = Phase::Finished;
        self.pending_coding = None;
        if status == SessionStatus::DroppedOut {
            self.dropout_point = self.last_answered.clone();
        }
        let change = StatusChange { status, dropout_point: self.dropout_point.clone() };
        self.record(at, RecordBody::StatusChange(change));
    }

    fn finish(&mut self, question: &QuestionSpec, status: SessionStatus, message: &str, at: Timestamp) {
        self.push_turn(Speaker::Bot, question, question.concept, TurnKind::System, message.to_string(), at, None);
        self.pending_prompt = None;
        self.set_status(status, at);
    }
}

fn context<'a>(q: &'a Questionnaire, spec: &'a QuestionSpec, condition: Condition) -> QuestionContext<'a> {
    QuestionContext { spec, prompt_text: spec.format(condition).text().unwrap_or(""), codebook: q.codebook_for(spec) }
}

fn seed_affordance(spec: &QuestionSpec, format: &Format) -> Affordance {
    match format {
        Format::ClosedSingleChoice { options, .. } => {
            if format.is_yes_no() {
                Affordance::YesNo
            } else if spec.concept == Concept::Experience {
                Affordance::Likert { labels: options.clone() }
            } else {
                Affordance::ChoiceList { options: options.clone() }
            }
        }
        _ => Affordance::FreeText,
    }
}

/// Case-insensitive yes/no word match; `None` when unintelligible.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    let word = text.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    if YES_WORDS.contains(&word.as_str()) {
        Some(true)
    } else if NO_WORDS.contains(&word.as_str()) {
        Some(false)
    } else {
        None
    }
}

/// Input after checking it against the pending affordance.
enum Reply {
    Text(String),
    /// Yes/no; `None` when free text could not be read as either.
    Binary(Option<bool>, String),
    Option(String),
}

fn interpret(affordance: &Affordance, input: RespondentInput) -> Result<Reply, EngineError> {
    use RespondentInput as In;
    let mismatch = |what: &str| Err(EngineError::AffordanceMismatch(what.to_string()));
    match (affordance, input) {
        (Affordance::FreeText, In::FreeText { text }) => Ok(Reply::Text(text)),
        (Affordance::FreeText, _) => mismatch("expected free text"),
        (Affordance::YesNo, In::YesNo { value }) => {
            Ok(Reply::Binary(Some(value), if value { "Yes" } else { "No" }.to_string()))
        }
        (Affordance::YesNo, In::FreeText { text }) => Ok(Reply::Binary(parse_yes_no(&text), text)),
        (Affordance::YesNo, _) => mismatch("expected yes/no"),
        (Affordance::ChoiceList { options }, In::Choice { index })
        | (Affordance::Likert { labels: options }, In::Choice { index }) => match options.get(index) {
            Some(label) => Ok(Reply::Option(label.clone())),
            None => mismatch(&format!("choice {index} out of range (0..{})", options.len())),
        },
        (Affordance::Likert { labels }, In::Likert { value }) => {
            match value.checked_sub(1).and_then(|i| labels.get(i)) {
                Some(label) => Ok(Reply::Option(label.clone())),
                None => mismatch(&format!("scale point {value} out of range (1..={})", labels.len())),
            }
        }
        (Affordance::ChoiceList { options } | Affordance::Likert { labels: options }, In::FreeText { text }) => {
            match options.iter().position(|o| o.eq_ignore_ascii_case(text.trim())) {
                Some(i) => Ok(Reply::Option(options[i].clone())),
                None => mismatch("free text does not name an option"),
            }
        }
        (Affordance::ChoiceList { .. }, _) => mismatch("expected a choice"),
        (Affordance::Likert { .. }, _) => mismatch("expected a scale point"),
    }
}

/// Open a session at the consent screener.
pub fn start_session(
    q: &Questionnaire,
    condition: Condition,
    respondent_id: &str,
    rng_seed: u64,
    now: Timestamp,
) -> Result<(Session, EngineStep), EngineError> {
    if !q.conditions.contains(&condition) {
        return Err(EngineError::UnsupportedCondition(condition));
    }
    let mut session = Session {
        id: format!("{respondent_id}-{condition}-{rng_seed:016x}"),
        respondent_id: respondent_id.to_string(),
        condition,
        questionnaire_id: q.id.clone(),
        rng_seed,
        rng: ChaCha8Rng::seed_from_u64(rng_seed),
        cursor: 0,
        phase: Phase::AwaitSeed,
        status: SessionStatus::Active,
        probe_used: BTreeMap::new(),
        pending_coding: None,
        pending_prompt: None,
        reask_used: false,
        answers: BTreeMap::new(),
        last_answered: None,
        dropout_point: None,
        started_at: now,
        last_activity_at: now,
        turns: Vec::new(),
        codings: Vec::new(),
        probes: Vec::new(),
        next_record_seq: 0,
        outbox: Vec::new(),
    };
    let meta =
        SessionMeta { respondent_id: respondent_id.to_string(), condition, questionnaire_id: q.id.clone(), rng_seed };
    session.record(now, RecordBody::SessionOpened(meta));
    present_current(q, &mut session, now);
    let step = session.step();
    Ok((session, step))
}

/// Rename a freshly started session (e.g. to an unguessable server token).
/// Only valid before any record has been drained.
pub fn rename_session(session: &mut Session, id: &str) {
    session.id = id.to_string();
    for rec in &mut session.outbox {
        rec.session_id = id.to_string();
    }
}

/// Mark the session dropped out when it has been idle longer than `timeout`.
/// Returns whether the status changed.
pub fn expire_session(session: &mut Session, now: Timestamp, timeout: Duration) -> bool {
    if !session.is_active() {
        return false;
    }
    if now.since(session.last_activity_at) > timeout.as_millis() as i64 {
        session.pending_prompt = None;
        session.set_status(SessionStatus::DroppedOut, now);
        true
    } else {
        false
    }
}

/// Consume one respondent input.
pub fn advance(
    session: &mut Session,
    q: &Questionnaire,
    input: RespondentInput,
    agent: &dyn AgentBackend,
    now: Timestamp,
) -> Result<EngineStep, EngineError> {
    if session.questionnaire_id != q.id {
        return Err(EngineError::QuestionnaireMismatch {
            expected: session.questionnaire_id.clone(),
            got: q.id.clone(),
        });
    }
    if !session.is_active() {
        return Err(EngineError::SessionNotActive);
    }
    let prompt = session.pending_prompt.clone().ok_or(EngineError::SessionNotActive)?;
    let reply = interpret(&prompt.affordance, input)?;
    let spec = &q.questions[session.cursor];
    session.last_activity_at = now;

    match session.phase {
        Phase::AwaitSeed => on_seed(session, q, spec, &prompt, reply, agent, now),
        Phase::AwaitProbeAnswer => {
            let Reply::Text(text) = reply else { unreachable!("probe prompts take free text") };
            let concept = spec.probe_concept.unwrap_or(spec.concept);
            session.push_turn(Speaker::Respondent, spec, concept, TurnKind::Answer, text, now, None);
            next_question(q, session, now);
        }
        Phase::AwaitBinaryConfirm => on_binary(session, q, spec, &prompt, reply, now),
        Phase::AwaitCategoricalConfirm => {
            let Reply::Option(label) = reply else { unreachable!("categorical prompts take a choice") };
            let none_label = q.codebook_for(spec).map(|cb| cb.none_label.clone());
            let mut coding = session.pending_coding.take().unwrap_or_else(|| Coding::empty(&spec.id));
            coding.outcome = Some(if Some(&label) == none_label.as_ref() {
                ConfirmationOutcome::NoneOfAbove
            } else {
                ConfirmationOutcome::CategoricalSelection(label.clone())
            });
            finalize_coding(session, spec, coding, label, now);
            next_question(q, session, now);
        }
        Phase::Finished => return Err(EngineError::SessionNotActive),
    }
    Ok(session.step())
}

fn on_seed(
    session: &mut Session,
    q: &Questionnaire,
    spec: &QuestionSpec,
    prompt: &BotPrompt,
    reply: Reply,
    agent: &dyn AgentBackend,
    now: Timestamp,
) {
    let condition = session.condition;
    let format = spec.format(condition);
    let answer = match reply {
        Reply::Binary(None, raw) => {
            session.push_turn(Speaker::Respondent, spec, spec.concept, TurnKind::Answer, raw, now, None);
            if !session.reask_used {
                reask(session, spec, prompt, now);
                return;
            }
            // Second unintelligible reply counts as "No".
            "No".to_string()
        }
        Reply::Binary(Some(_), label) | Reply::Option(label) => {
            let label = if format.is_yes_no() { normalize_yes_no(&label) } else { label };
            session.push_turn(Speaker::Respondent, spec, spec.concept, TurnKind::Answer, label.clone(), now, None);
            label
        }
        Reply::Text(text) => {
            session.push_turn(Speaker::Respondent, spec, spec.concept, TurnKind::Answer, text.clone(), now, None);
            if matches!(format, Format::Numeric { .. }) && text.trim().parse::<f64>().is_err() && !session.reask_used {
                reask(session, spec, prompt, now);
                return;
            }
            text
        }
    };
    session.last_answered = Some(spec.id.clone());
    session.reask_used = false;

    if !format.is_open_ended() {
        session.answers.insert(spec.id.clone(), answer.clone());
        if spec.concept == Concept::Consent && answer == "No" {
            session.finish(spec, SessionStatus::Declined, DECLINED_MESSAGE, now);
            return;
        }
        next_question(q, session, now);
        return;
    }

    let allowed = spec.probes(condition);
    let ctx = context(q, spec, condition);
    if allowed.contains(&ProbeKind::Confirmation) {
        start_confirmation(session, q, spec, ctx, &answer, agent, now);
    } else if allowed.contains(&ProbeKind::ToneConfirmation) {
        start_tone_confirmation(session, q, spec, ctx, &answer, agent, now);
    } else if allowed.contains(&ProbeKind::Elaboration) || allowed.contains(&ProbeKind::Relevance) {
        maybe_probe(session, q, spec, ctx, &answer, &allowed, agent, now);
    } else {
        next_question(q, session, now);
    }
}

fn normalize_yes_no(label: &str) -> String {
    match parse_yes_no(label) {
        Some(true) => "Yes".into(),
        Some(false) => "No".into(),
        None => label.to_string(),
    }
}

fn reask(session: &mut Session, spec: &QuestionSpec, prompt: &BotPrompt, now: Timestamp) {
    session.reask_used = true;
    let text = format!("{REASK_PREFIX} {}", prompt.text);
    session.prompt(spec, prompt.kind, text, prompt.affordance.clone(), now);
}

fn note_agent_failure(session: &mut Session, spec: &QuestionSpec, err: &AgentError, now: Timestamp) {
    session.system_note(spec, format!("agent failure: {err}"), now);
}

fn start_confirmation(
    session: &mut Session,
    q: &Questionnaire,
    spec: &QuestionSpec,
    ctx: QuestionContext<'_>,
    answer: &str,
    agent: &dyn AgentBackend,
    now: Timestamp,
) {
    let mut coding = match agent.code_response(ctx, answer) {
        Ok(c) => c,
        Err(err) => {
            note_agent_failure(session, spec, &err, now);
            Coding::empty(&spec.id)
        }
    };
    // Categories outside the codebook never reach the respondent.
    if let Some(cb) = ctx.codebook {
        coding.detected.retain(|d| cb.contains(&d.name));
    }
    if !coding.detected.is_empty() {
        let pick = session.rng.random_range(0..coding.detected.len());
        let category = coding.detected[pick].name.clone();
        let template = spec.templates.binary.as_deref().unwrap_or_default();
        match render_confirmation(template, &category) {
            Ok(text) => {
                coding.sampled_for_confirmation = Some(category);
                session.pending_coding = Some(coding);
                session.probe_used.insert(spec.id.clone(), true);
                session.phase = Phase::AwaitBinaryConfirm;
                session.prompt(spec, TurnKind::ConfirmBinary, text, Affordance::YesNo, now);
                return;
            }
            Err(err) => note_agent_failure(session, spec, &AgentError::Template(err), now),
        }
    }
    session.pending_coding = Some(coding);
    categorical_fallback(session, q, spec, now);
}

fn categorical_fallback(session: &mut Session, q: &Questionnaire, spec: &QuestionSpec, now: Timestamp) {
    let Some(codebook) = q.codebook_for(spec) else {
        next_question(q, session, now);
        return;
    };
    let header = spec
        .templates
        .categorical_header
        .clone()
        .unwrap_or_else(|| "Which of the following best matches your answer?".to_string());
    session.probe_used.insert(spec.id.clone(), true);
    session.phase = Phase::AwaitCategoricalConfirm;
    session.prompt(
        spec,
        TurnKind::ConfirmCategorical,
        header,
        Affordance::ChoiceList { options: codebook.fallback_options() },
        now,
    );
}

fn start_tone_confirmation(
    session: &mut Session,
    q: &Questionnaire,
    spec: &QuestionSpec,
    ctx: QuestionContext<'_>,
    answer: &str,
    agent: &dyn AgentBackend,
    now: Timestamp,
) {
    let tone = match agent.classify_sentiment(ctx, answer) {
        Ok(t) => t,
        Err(err) => {
            note_agent_failure(session, spec, &err, now);
            next_question(q, session, now);
            return;
        }
    };
    let mut coding = Coding::empty(&spec.id);
    coding.tone = Some(tone);
    let template = match tone {
        Tone::Positive => spec.templates.tone_positive.clone(),
        Tone::Negative => spec.templates.tone_negative.clone(),
        Tone::Indeterminate => None,
    };
    match template {
        Some(text) => {
            coding.detected.push(DetectedCategory { name: tone.as_str().to_string(), score: 1.0 });
            coding.sampled_for_confirmation = Some(tone.as_str().to_string());
            session.pending_coding = Some(coding);
            session.probe_used.insert(spec.id.clone(), true);
            session.phase = Phase::AwaitBinaryConfirm;
            session.prompt(spec, TurnKind::ConfirmBinary, text, Affordance::YesNo, now);
        }
        None => {
            session.codings.push(coding.clone());
            session.record(now, RecordBody::CodingEvent(coding));
            next_question(q, session, now);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn maybe_probe(
    session: &mut Session,
    q: &Questionnaire,
    spec: &QuestionSpec,
    ctx: QuestionContext<'_>,
    answer: &str,
    allowed: &BTreeSet<ProbeKind>,
    agent: &dyn AgentBackend,
    now: Timestamp,
) {
    let decision = match agent.decide_probe(ctx, answer, allowed) {
        Ok(d) => d,
        Err(err) => {
            note_agent_failure(session, spec, &err, now);
            next_question(q, session, now);
            return;
        }
    };
    let already = session.probe_used.get(&spec.id).copied().unwrap_or(false);
    let deliver = !already && decision.permitted_by(allowed) && decision.text.is_some();
    let record = ProbeRecord { question_id: spec.id.clone(), decision: decision.clone(), delivered: deliver };
    session.probes.push(record.clone());
    session.record(now, RecordBody::ProbeEvent(record));
    if !deliver {
        next_question(q, session, now);
        return;
    }
    let kind = match decision.kind {
        ProbeDecisionKind::Elaboration => TurnKind::ProbeElaboration,
        ProbeDecisionKind::Relevance => TurnKind::ProbeRelevance,
        ProbeDecisionKind::Hybrid => TurnKind::ProbeHybrid,
        ProbeDecisionKind::None => unreachable!("None is never permitted"),
    };
    session.probe_used.insert(spec.id.clone(), true);
    session.phase = Phase::AwaitProbeAnswer;
    session.prompt(spec, kind, decision.text.unwrap_or_default(), Affordance::FreeText, now);
}

fn on_binary(
    session: &mut Session,
    q: &Questionnaire,
    spec: &QuestionSpec,
    prompt: &BotPrompt,
    reply: Reply,
    now: Timestamp,
) {
    let Reply::Binary(value, raw) = reply else { unreachable!("binary prompts take yes/no") };
    let mut coding = session.pending_coding.take().unwrap_or_else(|| Coding::empty(&spec.id));
    let is_tone = coding.tone.is_some();
    match value {
        Some(true) => {
            coding.binary_answer = Some(true);
            coding.outcome = Some(ConfirmationOutcome::ConfirmedYes);
            finalize_coding(session, spec, coding, raw, now);
            next_question(q, session, now);
        }
        Some(false) => {
            coding.binary_answer = Some(false);
            coding.outcome = Some(ConfirmationOutcome::Denied);
            if is_tone {
                finalize_coding(session, spec, coding, raw, now);
                next_question(q, session, now);
            } else {
                session.push_turn(Speaker::Respondent, spec, spec.concept, TurnKind::ConfirmAnswer, raw, now, None);
                session.pending_coding = Some(coding);
                categorical_fallback(session, q, spec, now);
            }
        }
        None => {
            session.push_turn(Speaker::Respondent, spec, spec.concept, TurnKind::ConfirmAnswer, raw, now, None);
            if !session.reask_used {
                session.pending_coding = Some(coding);
                reask(session, spec, prompt, now);
            } else if is_tone {
                coding.outcome = None;
                session.codings.push(coding.clone());
                session.record(now, RecordBody::CodingEvent(coding));
                next_question(q, session, now);
            } else {
                session.pending_coding = Some(coding);
                categorical_fallback(session, q, spec, now);
            }
        }
    }
}

fn finalize_coding(session: &mut Session, spec: &QuestionSpec, coding: Coding, reply_text: String, now: Timestamp) {
    session.push_turn(
        Speaker::Respondent,
        spec,
        spec.concept,
        TurnKind::ConfirmAnswer,
        reply_text,
        now,
        Some(coding.clone()),
    );
    session.codings.push(coding.clone());
    session.record(now, RecordBody::CodingEvent(coding));
}

fn next_question(q: &Questionnaire, session: &mut Session, now: Timestamp) {
    session.cursor += 1;
    session.phase = Phase::AwaitSeed;
    session.reask_used = false;
    session.pending_coding = None;
    present_current(q, session, now);
}

/// Show the seed prompt at the cursor, skipping questions that are not asked
/// in this condition or whose branching rule fails. Closes the session after
/// the last question.
fn present_current(q: &Questionnaire, session: &mut Session, now: Timestamp) {
    while let Some(spec) = q.questions.get(session.cursor) {
        let format = spec.format(session.condition);
        let skip_branch =
            spec.ask_if.as_ref().is_some_and(|rule| session.answers.get(&rule.question) != Some(&rule.equals));
        let Some(text) = format.text().filter(|_| !skip_branch) else {
            session.cursor += 1;
            continue;
        };
        let text = match &spec.preamble {
            Some(pre) => format!("{pre}\n{text}"),
            None => text.to_string(),
        };
        let affordance = seed_affordance(spec, format);
        session.phase = Phase::AwaitSeed;
        session.prompt(spec, TurnKind::Seed, text, affordance, now);
        return;
    }
    let last = q.questions.last().expect("questionnaire has questions");
    session.cursor = q.questions.len() - 1;
    session.finish(last, SessionStatus::Completed, CLOSING_MESSAGE, now);
}
