//! The interviewing agent: codes open-ended answers against a codebook,
//! detects sentiment polarity and decides whether and how to probe.
//!
//! Two backends implement [`AgentBackend`]: [`ReferenceBackend`], a
//! deterministic lexicon/rule implementation used by every test and by the
//! simulator, and [`LlmBackend`], which asks an OpenAI-compatible chat
//! completion endpoint using a configurable prompt template.

mod lexicon;
mod llm;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::questionnaire::{Codebook, QuestionSpec, CATEGORY_SLOT};

pub use lexicon::{ReferenceBackend, ReferenceConfig};
pub use llm::{parse_model_output, LlmBackend, LlmConfig, ModelOutput, PromptVars};

pub const DEFAULT_ELABORATION_PROBE: &str = "Could you be more specific?";
pub const DEFAULT_RELEVANCE_PROBE: &str = "Hmm I think I know what you mean, but could you explain a bit more?";

pub use crate::questionnaire::ProbeKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedCategory {
    pub name: String,
    pub score: f64,
}

/// Result of a confirmation exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "category", rename_all = "snake_case")]
pub enum ConfirmationOutcome {
    ConfirmedYes,
    /// Binary confirmation denied and no category picked afterwards.
    Denied,
    CategoricalSelection(String),
    NoneOfAbove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tone {
    Positive,
    Negative,
    Indeterminate,
}

impl Tone {
    pub fn as_str(self) -> &'static str {
        match self {
            Tone::Positive => "positive",
            Tone::Negative => "negative",
            Tone::Indeterminate => "indeterminate",
        }
    }
}

/// Active coding of one open-ended answer plus what the respondent said
/// about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coding {
    pub question_id: String,
    pub detected: Vec<DetectedCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_for_confirmation: Option<String>,
    /// Raw yes/no given to the binary confirmation, if one was asked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_answer: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ConfirmationOutcome>,
    /// Set for sentiment (tone) codings; `detected` then names the polarity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tone: Option<Tone>,
}

impl Coding {
    pub fn empty(question_id: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            detected: Vec::new(),
            sampled_for_confirmation: None,
            binary_answer: None,
            outcome: None,
            tone: None,
        }
    }

    pub fn is_coded(&self) -> bool {
        self.sampled_for_confirmation.is_some()
    }

    pub fn detected_names(&self) -> impl Iterator<Item = &str> {
        self.detected.iter().map(|d| d.name.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDecisionKind {
    Elaboration,
    Relevance,
    Hybrid,
    None,
}

impl ProbeDecisionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeDecisionKind::Elaboration => "elaboration",
            ProbeDecisionKind::Relevance => "relevance",
            ProbeDecisionKind::Hybrid => "hybrid",
            ProbeDecisionKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeDecision {
    pub kind: ProbeDecisionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub rationale: String,
}

impl ProbeDecision {
    pub fn none(rationale: impl Into<String>) -> Self {
        Self { kind: ProbeDecisionKind::None, text: None, rationale: rationale.into() }
    }

    pub fn probe(kind: ProbeDecisionKind, text: impl Into<String>, rationale: impl Into<String>) -> Self {
        debug_assert!(kind != ProbeDecisionKind::None);
        Self { kind, text: Some(text.into()), rationale: rationale.into() }
    }

    /// Whether this decision may be delivered when `allowed` probe kinds are
    /// enabled. Hybrids need both elaboration and relevance.
    pub fn permitted_by(&self, allowed: &BTreeSet<ProbeKind>) -> bool {
        match self.kind {
            ProbeDecisionKind::None => false,
            ProbeDecisionKind::Elaboration => allowed.contains(&ProbeKind::Elaboration),
            ProbeDecisionKind::Relevance => allowed.contains(&ProbeKind::Relevance),
            ProbeDecisionKind::Hybrid => {
                allowed.contains(&ProbeKind::Elaboration) && allowed.contains(&ProbeKind::Relevance)
            }
        }
    }
}

/// What the backend sees about the question being asked.
#[derive(Debug, Clone, Copy)]
pub struct QuestionContext<'a> {
    pub spec: &'a QuestionSpec,
    /// Wording actually shown to the respondent in this condition.
    pub prompt_text: &'a str,
    pub codebook: Option<&'a Codebook>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed model output: {0}")]
    MalformedModelOutput(String),
    #[error("question `{0}` has no codebook")]
    NoCodebook(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template has {0} `{{category}}` slots, expected exactly one")]
    SlotCount(usize),
}

pub trait AgentBackend: Send + Sync {
    fn code_response(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Coding, AgentError>;

    fn classify_sentiment(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Tone, AgentError>;

    fn decide_probe(
        &self,
        ctx: QuestionContext<'_>,
        seed_text: &str,
        allowed: &BTreeSet<ProbeKind>,
    ) -> Result<ProbeDecision, AgentError>;
}

impl<T: AgentBackend + ?Sized> AgentBackend for Box<T> {
    fn code_response(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Coding, AgentError> {
        (**self).code_response(ctx, text)
    }

    fn classify_sentiment(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Tone, AgentError> {
        (**self).classify_sentiment(ctx, text)
    }

    fn decide_probe(
        &self,
        ctx: QuestionContext<'_>,
        seed_text: &str,
        allowed: &BTreeSet<ProbeKind>,
    ) -> Result<ProbeDecision, AgentError> {
        (**self).decide_probe(ctx, seed_text, allowed)
    }
}

impl<T: AgentBackend + ?Sized> AgentBackend for std::sync::Arc<T> {
    fn code_response(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Coding, AgentError> {
        (**self).code_response(ctx, text)
    }

    fn classify_sentiment(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Tone, AgentError> {
        (**self).classify_sentiment(ctx, text)
    }

    fn decide_probe(
        &self,
        ctx: QuestionContext<'_>,
        seed_text: &str,
        allowed: &BTreeSet<ProbeKind>,
    ) -> Result<ProbeDecision, AgentError> {
        (**self).decide_probe(ctx, seed_text, allowed)
    }
}

/// Substitute `category` into the single `{category}` slot.
pub fn render_confirmation(template: &str, category: &str) -> Result<String, TemplateError> {
    let slots = template.matches(CATEGORY_SLOT).count();
    if slots != 1 {
        return Err(TemplateError::SlotCount(slots));
    }
    Ok(template.replacen(CATEGORY_SLOT, category, 1))
}

impl fmt::Display for ProbeDecisionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
