//! Chat-completion backend. The prompt is a user-supplied template with
//! `{task}`, `{question}`, `{seed_response}`, `{codebook_categories}` and
//! `{probe_kinds_allowed}` slots. The model must reply with one tagged line:
//!
//! ```text
//! CATEGORIES: Economy; Cost of Living
//! TONE: negative
//! PROBE: elaboration | Could you tell me more about that?
//! ```

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    AgentBackend, AgentError, Coding, DetectedCategory, ProbeDecision, ProbeDecisionKind, ProbeKind, QuestionContext,
    Tone,
};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "\
You are a survey interviewer assistant. Task: {task}.
Question asked: {question}
Respondent answer: {seed_response}
Codebook categories (names only): {codebook_categories}
Probe kinds allowed: {probe_kinds_allowed}
Reply with exactly one line.
For task `code`: CATEGORIES: <category>; <category> (use the exact names, or leave empty).
For task `sentiment`: TONE: positive | negative | indeterminate.
For task `probe`: PROBE: <elaboration|relevance|hybrid|none> | <probe question>.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Prompt template file; the built-in template is used when unset.
    pub prompt_template: Option<PathBuf>,
    pub timeout_secs: u64,
    pub temperature: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "CONVOPROBE_API_KEY".into(),
            prompt_template: None,
            timeout_secs: 30,
            temperature: 0.2,
        }
    }
}

/// Values substituted into the prompt template.
#[derive(Debug, Clone, Default)]
pub struct PromptVars<'a> {
    pub task: &'a str,
    pub question: &'a str,
    pub seed_response: &'a str,
    pub codebook_categories: String,
    pub probe_kinds_allowed: String,
}

impl PromptVars<'_> {
    pub fn render(&self, template: &str) -> String {
        template
            .replace("{task}", self.task)
            .replace("{question}", self.question)
            .replace("{codebook_categories}", &self.codebook_categories)
            .replace("{probe_kinds_allowed}", &self.probe_kinds_allowed)
            // Last, so respondent text containing slot names stays literal.
            .replace("{seed_response}", self.seed_response)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelOutput {
    Categories(Vec<String>),
    Tone(Tone),
    Probe { kind: ProbeDecisionKind, text: Option<String> },
}

/// Find the first tagged line in a model reply.
pub fn parse_model_output(reply: &str) -> Result<ModelOutput, AgentError> {
    for line in reply.lines() {
        let line = line.trim().trim_matches('`').trim();
        let Some((tag, rest)) = line.split_once(':') else {
            continue;
        };
        let rest = rest.trim();
        match tag.trim().to_ascii_uppercase().as_str() {
            "CATEGORIES" => {
                let cats = rest.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect();
                return Ok(ModelOutput::Categories(cats));
            }
            "TONE" => {
                let tone = match rest.to_ascii_lowercase().as_str() {
                    "positive" => Tone::Positive,
                    "negative" => Tone::Negative,
                    "indeterminate" | "neutral" | "mixed" => Tone::Indeterminate,
                    other => return Err(AgentError::MalformedModelOutput(format!("unknown tone `{other}`"))),
                };
                return Ok(ModelOutput::Tone(tone));
            }
            "PROBE" => {
                let (kind, text) = match rest.split_once('|') {
                    Some((k, t)) => (k.trim(), Some(t.trim())),
                    None => (rest, None),
                };
                let kind = match kind.to_ascii_lowercase().as_str() {
                    "elaboration" => ProbeDecisionKind::Elaboration,
                    "relevance" => ProbeDecisionKind::Relevance,
                    "hybrid" => ProbeDecisionKind::Hybrid,
                    "none" => ProbeDecisionKind::None,
                    other => return Err(AgentError::MalformedModelOutput(format!("unknown probe kind `{other}`"))),
                };
                let text = text.filter(|t| !t.is_empty()).map(str::to_string);
                if kind != ProbeDecisionKind::None && text.is_none() {
                    return Err(AgentError::MalformedModelOutput("probe without text".into()));
                }
                let text = if kind == ProbeDecisionKind::None { None } else { text };
                return Ok(ModelOutput::Probe { kind, text });
            }
            _ => continue,
        }
    }
    Err(AgentError::MalformedModelOutput(format!(
        "no tagged line in reply: {:?}",
        reply.chars().take(120).collect::<String>()
    )))
}

/// Non-deterministic backend calling a chat-completion endpoint.
pub struct LlmBackend {
    config: LlmConfig,
    template: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for LlmBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmBackend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl LlmBackend {
    pub fn new(config: LlmConfig) -> Result<Self, AgentError> {
        let template = match &config.prompt_template {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| AgentError::Transport(format!("reading {}: {e}", path.display())))?,
            None => DEFAULT_PROMPT_TEMPLATE.to_string(),
        };
        let api_key = std::env::var(&config.api_key_env).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        Ok(Self { config, template, api_key, client })
    }

    fn complete(&self, prompt: &str) -> Result<String, AgentError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut request = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| AgentError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(AgentError::Transport(format!("{url} returned {status}")));
        }
        let value: serde_json::Value = response.json().map_err(|e| AgentError::MalformedModelOutput(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AgentError::MalformedModelOutput("response has no message content".into()))
    }

    fn ask(&self, ctx: QuestionContext<'_>, task: &str, seed: &str, allowed: &str) -> Result<ModelOutput, AgentError> {
        let vars = PromptVars {
            task,
            question: ctx.prompt_text,
            seed_response: seed,
            codebook_categories: ctx
                .codebook
                .map(|cb| cb.categories.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join("; "))
                .unwrap_or_default(),
            probe_kinds_allowed: allowed.to_string(),
        };
        let reply = self.complete(&vars.render(&self.template))?;
        parse_model_output(&reply)
    }
}

fn unexpected(what: &str, got: &ModelOutput) -> AgentError {
    AgentError::MalformedModelOutput(format!("expected {what}, got {got:?}"))
}

impl AgentBackend for LlmBackend {
    fn code_response(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Coding, AgentError> {
        let codebook = ctx.codebook.ok_or_else(|| AgentError::NoCodebook(ctx.spec.id.clone()))?;
        let mut coding = Coding::empty(&ctx.spec.id);
        if text.trim().is_empty() {
            return Ok(coding);
        }
        match self.ask(ctx, "code", text, "")? {
            ModelOutput::Categories(names) => {
                for name in names {
                    if name.eq_ignore_ascii_case(&codebook.none_label) || name.eq_ignore_ascii_case("none") {
                        continue;
                    }
                    let category =
                        codebook.categories.iter().find(|c| c.name.eq_ignore_ascii_case(&name)).ok_or_else(|| {
                            AgentError::MalformedModelOutput(format!("`{name}` is not in the codebook"))
                        })?;
                    if !coding.detected_names().any(|n| n == category.name) {
                        coding.detected.push(DetectedCategory { name: category.name.clone(), score: 1.0 });
                    }
                }
                Ok(coding)
            }
            other => Err(unexpected("CATEGORIES", &other)),
        }
    }

    fn classify_sentiment(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Tone, AgentError> {
        match self.ask(ctx, "sentiment", text, "")? {
            ModelOutput::Tone(t) => Ok(t),
            other => Err(unexpected("TONE", &other)),
        }
    }

    fn decide_probe(
        &self,
        ctx: QuestionContext<'_>,
        seed_text: &str,
        allowed: &BTreeSet<ProbeKind>,
    ) -> Result<ProbeDecision, AgentError> {
        let kinds: Vec<&str> = allowed
            .iter()
            .filter_map(|k| match k {
                ProbeKind::Elaboration => Some("elaboration"),
                ProbeKind::Relevance => Some("relevance"),
                _ => None,
            })
            .collect();
        if kinds.is_empty() {
            return Ok(ProbeDecision::none("not_allowed"));
        }
        match self.ask(ctx, "probe", seed_text, &kinds.join(", "))? {
            ModelOutput::Probe { kind: ProbeDecisionKind::None, .. } => Ok(ProbeDecision::none("model")),
            ModelOutput::Probe { kind, text } => Ok(ProbeDecision { kind, text, rationale: "model".into() }),
            other => Err(unexpected("PROBE", &other)),
        }
    }
}
