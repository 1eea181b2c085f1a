//! Conversation record types shared by the engine, the store and the
//! metrics: turns, transcript records and the folded per-session transcript.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::{Coding, ProbeDecision};
use crate::questionnaire::{Concept, Condition};

/// Milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn now() -> Self {
        let d = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
        Timestamp(d.as_millis() as i64)
    }

    pub fn plus_millis(self, ms: i64) -> Self {
        Timestamp(self.0 + ms)
    }

    pub fn plus(self, d: std::time::Duration) -> Self {
        self.plus_millis(d.as_millis() as i64)
    }

    /// Elapsed milliseconds from `earlier` to `self`.
    pub fn since(self, earlier: Timestamp) -> i64 {
        self.0 - earlier.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Bot,
    Respondent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Seed,
    ProbeElaboration,
    ProbeRelevance,
    ProbeHybrid,
    ConfirmBinary,
    ConfirmCategorical,
    Answer,
    ConfirmAnswer,
    System,
}

impl TurnKind {
    pub fn is_probe(self) -> bool {
        matches!(self, TurnKind::ProbeElaboration | TurnKind::ProbeRelevance | TurnKind::ProbeHybrid)
    }

    pub fn is_confirmation(self) -> bool {
        matches!(self, TurnKind::ConfirmBinary | TurnKind::ConfirmCategorical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub seq: u64,
    pub speaker: Speaker,
    pub question_id: String,
    pub concept: Concept,
    pub kind: TurnKind,
    pub text: String,
    pub at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coding_snapshot: Option<Coding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Completed,
    DroppedOut,
    /// Consent refused at the screener.
    Declined,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        self != SessionStatus::Active
    }
}

/// A probe decision as taken for one seed answer, and whether it reached the
/// respondent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub question_id: String,
    pub decision: ProbeDecision,
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub respondent_id: String,
    pub condition: Condition,
    pub questionnaire_id: String,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusChange {
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_point: Option<String>,
}

pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum RecordBody {
    SessionOpened(SessionMeta),
    Turn(Turn),
    CodingEvent(Coding),
    ProbeEvent(ProbeRecord),
    StatusChange(StatusChange),
}

/// One persisted event. `seq` counts per session from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub v: u32,
    pub seq: u64,
    pub session_id: String,
    pub at: Timestamp,
    #[serde(flatten)]
    pub body: RecordBody,
}

/// Everything recorded for one session, in a shape metrics can consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub respondent_id: String,
    pub condition: Condition,
    pub questionnaire_id: String,
    pub status: SessionStatus,
    pub dropout_point: Option<String>,
    pub turns: Vec<Turn>,
    pub codings: Vec<Coding>,
    pub probes: Vec<ProbeRecord>,
}

impl Transcript {
    /// Fold records into transcripts, ordered by first appearance. Records
    /// for sessions without a preceding `SessionOpened` are ignored.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TranscriptRecord>) -> Vec<Transcript> {
        let mut order: Vec<String> = Vec::new();
        let mut by_id: BTreeMap<String, Transcript> = BTreeMap::new();
        for rec in records {
            if let RecordBody::SessionOpened(meta) = &rec.body {
                if !by_id.contains_key(&rec.session_id) {
                    order.push(rec.session_id.clone());
                    by_id.insert(
                        rec.session_id.clone(),
                        Transcript {
                            session_id: rec.session_id.clone(),
                            respondent_id: meta.respondent_id.clone(),
                            condition: meta.condition,
                            questionnaire_id: meta.questionnaire_id.clone(),
                            status: SessionStatus::Active,
                            dropout_point: None,
                            turns: Vec::new(),
                            codings: Vec::new(),
                            probes: Vec::new(),
                        },
                    );
                }
                continue;
            }
            let Some(t) = by_id.get_mut(&rec.session_id) else {
                continue;
            };
            match &rec.body {
                RecordBody::SessionOpened(_) => {}
                RecordBody::Turn(turn) => t.turns.push(turn.clone()),
                RecordBody::CodingEvent(c) => t.codings.push(c.clone()),
                RecordBody::ProbeEvent(p) => t.probes.push(p.clone()),
                RecordBody::StatusChange(s) => {
                    t.status = s.status;
                    t.dropout_point = s.dropout_point.clone();
                }
            }
        }
        order.into_iter().filter_map(|id| by_id.remove(&id)).collect()
    }

    /// The respondent's answer text to a question's seed prompt.
    pub fn seed_answer(&self, question_id: &str) -> Option<&str> {
        self.exchange(question_id)
            .into_iter()
            .find(|t| t.speaker == Speaker::Respondent && t.kind == TurnKind::Answer)
            .map(|t| t.text.as_str())
    }

    /// The respondent's answer to a delivered elaboration/relevance probe.
    pub fn post_probe_answer(&self, question_id: &str) -> Option<&str> {
        let turns = self.exchange(question_id);
        let probe_at = turns.iter().position(|t| t.kind.is_probe())?;
        turns[probe_at + 1..]
            .iter()
            .find(|t| t.speaker == Speaker::Respondent && t.kind == TurnKind::Answer)
            .map(|t| t.text.as_str())
    }

    pub fn exchange(&self, question_id: &str) -> Vec<&Turn> {
        self.turns.iter().filter(|t| t.question_id == question_id).collect()
    }

    /// Question ids whose seed prompt was shown, in order.
    pub fn exposed_questions(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.turns {
            if t.speaker == Speaker::Bot && t.kind == TurnKind::Seed && !out.contains(&t.question_id.as_str()) {
                out.push(&t.question_id);
            }
        }
        out
    }

    /// Question ids the respondent answered (seed answer given), in order.
    pub fn answered_questions(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.turns {
            if t.speaker == Speaker::Respondent && t.kind == TurnKind::Answer && !out.contains(&t.question_id.as_str())
            {
                out.push(&t.question_id);
            }
        }
        out
    }

    pub fn duration_millis(&self) -> Option<i64> {
        let first = self.turns.first()?;
        let last = self.turns.last()?;
        Some(last.at.since(first.at))
    }
}
