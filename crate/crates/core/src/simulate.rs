//! Synthetic respondents and a three-arm experiment runner.
//!
//! Answers are template text: keywords from the respondent's true category,
//! occasional keywords from a wrong category, and neutral filler. Because the
//! simulator knows every true category it can act as a perfect coder, which
//! gives oracle precision to compare against respondent confirmations.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{render_confirmation, AgentBackend, ReferenceConfig, Tone};
use crate::engine::{advance, expire_session, start_session, Affordance, BotPrompt, EngineError, RespondentInput};
use crate::metrics::{CodeLabel, CoderVote, ResponseKey};
use crate::questionnaire::{Concept, Condition, Format, QuestionSpec, Questionnaire};
use crate::store::{Store, StoreError};
use crate::transcript::{Timestamp, Transcript, TranscriptRecord, TurnKind};

/// Coder id used for ground-truth labels.
pub const GROUND_TRUTH_CODER: &str = "ground_truth";
/// Start of simulated time (2024-06-01T00:00:00Z).
pub const SIM_EPOCH_MS: i64 = 1_717_200_000_000;

/// Neutral words that hit no codebook lexicon, relevance lexicon or tone list.
const FILLER: [&str; 32] = [
    "i",
    "think",
    "the",
    "main",
    "thing",
    "is",
    "that",
    "really",
    "just",
    "about",
    "of",
    "a",
    "lot",
    "kind",
    "mostly",
    "probably",
    "honestly",
    "these",
    "days",
    "for",
    "me",
    "we",
    "all",
    "know",
    "what",
    "it",
    "seems",
    "like",
    "everything",
    "around",
    "here",
    "definitely",
];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("population config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A scalar distribution for population parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dist {
    Constant {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Beta {
        alpha: f64,
        beta: f64,
    },
    /// Normal, clamped to `[min, max]`.
    Normal {
        mean: f64,
        sd: f64,
        min: f64,
        max: f64,
    },
    Discrete {
        values: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl Dist {
    pub fn constant(value: f64) -> Self {
        Dist::Constant { value }
    }

    // Negated comparisons so that NaN parameters are rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self, name: &str) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(format!("{name}: {m}")));
        match self {
            Dist::Constant { value } if !value.is_finite() => bad("non-finite constant"),
            Dist::Uniform { low, high } if !(low <= high) => bad("uniform needs low <= high"),
            Dist::Beta { alpha, beta } if !(*alpha > 0.0 && *beta > 0.0) => bad("beta parameters must be positive"),
            Dist::Normal { sd, min, max, .. } if !(*sd >= 0.0 && min <= max) => {
                bad("normal needs sd >= 0 and min <= max")
            }
            Dist::Discrete { values, weights }
                if values.is_empty()
                    || values.len() != weights.len()
                    || weights.iter().any(|w| *w < 0.0)
                    || weights.iter().sum::<f64>() <= 0.0 =>
            {
                bad("discrete needs matching values and non-negative weights")
            }
            _ => Ok(()),
        }
    }

    /// Smallest and largest value the distribution can produce.
    fn support(&self) -> (f64, f64) {
        match self {
            Dist::Constant { value } => (*value, *value),
            Dist::Uniform { low, high } => (*low, *high),
            Dist::Beta { .. } => (0.0, 1.0),
            Dist::Normal { min, max, .. } => (*min, *max),
            Dist::Discrete { values, .. } => (
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Dist::Constant { value } => *value,
            Dist::Uniform { low, high } => {
                if low == high {
                    *low
                } else {
                    rng.random_range(*low..*high)
                }
            }
            Dist::Beta { alpha, beta } => Beta::new(*alpha, *beta).expect("validated").sample(rng),
            Dist::Normal { mean, sd, min, max } => {
                Normal::new(*mean, *sd).expect("validated").sample(rng).clamp(*min, *max)
            }
            Dist::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random_range(0.0..total);
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                *values.last().expect("validated")
            }
        }
    }
}

/// How respondents answer elaboration/relevance probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ProbeResponse {
    /// Answer on topic at `length_factor` × verbosity.
    Engaged { length_factor: f64 },
    /// Give an empty reply: probes change nothing.
    Ignore,
    /// Reply with exactly `tokens` on-topic tokens.
    FixedTokens { tokens: usize },
}

/// Seconds spent per respondent action and per bot turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub think_secs: f64,
    pub secs_per_token: f64,
    pub click_secs: f64,
    pub bot_latency_secs: f64,
    /// Latency before a generated elaboration/relevance probe appears.
    pub probe_latency_secs: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { think_secs: 4.0, secs_per_token: 1.2, click_secs: 3.0, bot_latency_secs: 2.0, probe_latency_secs: 12.0 }
    }
}

/// Population config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    /// Mean tokens per open-ended answer.
    pub verbosity: Dist,
    /// Probability of saying "yes" to any confirmation regardless of truth.
    pub acquiescence: Dist,
    /// Per-prompt quit probability before weighting.
    pub dropout_hazard: Dist,
    pub typo_rate: Dist,
    /// Probability that a generated token is a keyword of the true category.
    pub keyword_rate: f64,
    /// Probability that a generated token is a keyword of some other category.
    pub confusion_rate: f64,
    /// Probability of answering "Yes" to the employment question.
    pub working_rate: f64,
    /// Probability that the respondent's view of the economy is negative.
    pub negative_tone_rate: f64,
    /// Hazard weight of open-ended prompts relative to closed ones.
    pub open_ended_weight: f64,
    /// Hazard weight of confirmation prompts.
    pub confirmation_burden: f64,
    /// Extra multiplier on elaboration/relevance probes (on top of the
    /// open-ended weight).
    pub probe_burden: f64,
    pub probe_response: ProbeResponse,
    pub timing: TimingConfig,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            verbosity: Dist::Normal { mean: 8.0, sd: 3.0, min: 2.0, max: 30.0 },
            acquiescence: Dist::constant(0.3),
            dropout_hazard: Dist::constant(0.006),
            typo_rate: Dist::constant(0.02),
            keyword_rate: 0.22,
            confusion_rate: 0.15,
            working_rate: 0.6,
            negative_tone_rate: 0.6,
            open_ended_weight: 2.0,
            confirmation_burden: 1.0,
            probe_burden: 3.0,
            probe_response: ProbeResponse::Engaged { length_factor: 1.5 },
            timing: TimingConfig::default(),
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, d) in [
            ("verbosity", &self.verbosity),
            ("acquiescence", &self.acquiescence),
            ("dropout_hazard", &self.dropout_hazard),
            ("typo_rate", &self.typo_rate),
        ] {
            d.validate(name)?;
        }
        let (vlo, _) = self.verbosity.support();
        if vlo <= 0.0 {
            return Err(SimError::Config("verbosity must be positive".into()));
        }
        for (name, d) in [
            ("acquiescence", &self.acquiescence),
            ("dropout_hazard", &self.dropout_hazard),
            ("typo_rate", &self.typo_rate),
        ] {
            let (lo, hi) = d.support();
            if lo < 0.0 || hi > 1.0 {
                return Err(SimError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        for (name, p) in [
            ("keyword_rate", self.keyword_rate),
            ("confusion_rate", self.confusion_rate),
            ("working_rate", self.working_rate),
            ("negative_tone_rate", self.negative_tone_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.keyword_rate + self.confusion_rate > 1.0 {
            return Err(SimError::Config("keyword_rate + confusion_rate must not exceed 1".into()));
        }
        for (name, w) in [
            ("open_ended_weight", self.open_ended_weight),
            ("confirmation_burden", self.confirmation_burden),
            ("probe_burden", self.probe_burden),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(SimError::Config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentProfile {
    pub verbosity: f64,
    pub acquiescence: f64,
    pub dropout_hazard: f64,
    pub typo_rate: f64,
    /// True codebook category per coded question id.
    pub true_categories: BTreeMap<String, String>,
    pub tone: Tone,
    pub working: bool,
    pub age: u32,
}

impl RespondentProfile {
    pub fn true_category(&self, question_id: &str) -> Option<&str> {
        self.true_categories.get(question_id).map(String::as_str)
    }
}

pub fn sample_profile(
    config: &PopulationConfig,
    q: &Questionnaire,
    rng: &mut impl Rng,
) -> Result<RespondentProfile, SimError> {
    config.validate()?;
    let mut true_categories = BTreeMap::new();
    for spec in &q.questions {
        let Some(cb) = q.codebook_for(spec) else {
            continue;
        };
        let pool: Vec<&str> = cb.categories.iter().filter(|c| !c.lexicon.is_empty()).map(|c| c.name.as_str()).collect();
        if let Some(c) = pool.choose(rng) {
            true_categories.insert(spec.id.clone(), c.to_string());
        }
    }
    Ok(RespondentProfile {
        verbosity: config.verbosity.sample(rng),
        acquiescence: config.acquiescence.sample(rng),
        dropout_hazard: config.dropout_hazard.sample(rng),
        typo_rate: config.typo_rate.sample(rng),
        true_categories,
        tone: if rng.random_bool(config.negative_tone_rate) { Tone::Negative } else { Tone::Positive },
        working: rng.random_bool(config.working_rate),
        age: rng.random_range(18..=85),
    })
}

/// What a simulated respondent does with a prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Answer { input: RespondentInput, secs: f64 },
    Quit,
}

fn hazard_weight(config: &PopulationConfig, q: &Questionnaire, prompt: &BotPrompt, condition: Condition) -> f64 {
    match prompt.kind {
        k if k.is_probe() => config.probe_burden * config.open_ended_weight,
        k if k.is_confirmation() => config.confirmation_burden,
        _ => {
            let open = q.question(&prompt.question_id).is_some_and(|s| s.format(condition).is_open_ended());
            if open && prompt.affordance == Affordance::FreeText {
                config.open_ended_weight
            } else {
                1.0
            }
        }
    }
}

fn typo(word: &str, rng: &mut impl Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.len() >= 2 {
        let i = rng.random_range(0..chars.len() - 1);
        chars.swap(i, i + 1);
    }
    chars.into_iter().collect()
}

/// Template text: true-category keywords, confusing keywords from other
/// categories, and filler.
fn compose(
    n_tokens: usize,
    own: &[&String],
    others: &[&String],
    config: &PopulationConfig,
    typo_rate: f64,
    rng: &mut impl Rng,
) -> String {
    let mut words: Vec<String> = Vec::with_capacity(n_tokens);
    while words.len() < n_tokens {
        let u: f64 = rng.random();
        let piece: String = if u < config.keyword_rate && !own.is_empty() {
            own.choose(rng).expect("non-empty").to_string()
        } else if u < config.keyword_rate + config.confusion_rate && !others.is_empty() {
            others.choose(rng).expect("non-empty").to_string()
        } else {
            FILLER.choose(rng).expect("non-empty").to_string()
        };
        for w in piece.split_whitespace() {
            words.push(if rng.random_bool(typo_rate) { typo(w, rng) } else { w.to_string() });
        }
    }
    words.join(" ")
}

fn token_count(mean: f64, rng: &mut impl Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    (Poisson::new(mean).expect("positive mean").sample(rng) as usize).max(1)
}

/// The question whose codebook and truth describe an answer to `spec`,
/// following the probe concept for probe replies.
fn topic_question<'a>(q: &'a Questionnaire, spec: &'a QuestionSpec, is_probe: bool) -> &'a QuestionSpec {
    if is_probe {
        if let Some(concept) = spec.probe_concept {
            if let Some(target) = q.questions.iter().find(|s| s.concept == concept) {
                return target;
            }
        }
    }
    spec
}

fn open_text(
    profile: &RespondentProfile,
    q: &Questionnaire,
    spec: &QuestionSpec,
    n_tokens: usize,
    config: &PopulationConfig,
    tones: &ReferenceConfig,
    rng: &mut impl Rng,
) -> String {
    if spec.concept == Concept::EconSentiment {
        let (own, other) = match profile.tone {
            Tone::Negative => (&tones.negative_words, &tones.positive_words),
            _ => (&tones.positive_words, &tones.negative_words),
        };
        let own: Vec<&String> = own.iter().collect();
        let other: Vec<&String> = other.iter().collect();
        // Sentiment answers are short and name their tone at least once.
        let mut text = compose(n_tokens.saturating_sub(1), &own, &other, config, profile.typo_rate, rng);
        let lead = own.choose(rng).expect("tone list").to_string();
        text = if text.is_empty() { lead } else { format!("{lead} {text}") };
        return text;
    }
    let Some(cb) = q.codebook_for(spec) else {
        return compose(n_tokens, &[], &[], config, profile.typo_rate, rng);
    };
    let truth = profile.true_category(&spec.id);
    let own: Vec<&String> =
        cb.categories.iter().filter(|c| Some(c.name.as_str()) == truth).flat_map(|c| &c.lexicon).collect();
    let others: Vec<&String> =
        cb.categories.iter().filter(|c| Some(c.name.as_str()) != truth).flat_map(|c| &c.lexicon).collect();
    compose(n_tokens, &own, &others, config, profile.typo_rate, rng)
}

fn tone_of_option(option: &str, tones: &ReferenceConfig) -> Tone {
    let toks = crate::metrics::text::tokens(option);
    let pos = toks.iter().any(|t| tones.positive_words.contains(t));
    let neg = toks.iter().any(|t| tones.negative_words.contains(t));
    match (pos, neg) {
        (true, false) => Tone::Positive,
        (false, true) => Tone::Negative,
        _ => Tone::Indeterminate,
    }
}

/// Decide what a respondent does with one prompt.
pub fn respond(
    profile: &RespondentProfile,
    prompt: &BotPrompt,
    q: &Questionnaire,
    condition: Condition,
    config: &PopulationConfig,
    rng: &mut impl Rng,
) -> Action {
    let hazard = (profile.dropout_hazard * hazard_weight(config, q, prompt, condition)).clamp(0.0, 1.0);
    if rng.random_bool(hazard) {
        return Action::Quit;
    }
    let timing = &config.timing;
    let click = timing.click_secs;
    let tones = ReferenceConfig::default();
    let Some(spec) = q.question(&prompt.question_id) else {
        return Action::Answer { input: RespondentInput::text(""), secs: click };
    };

    match &prompt.affordance {
        Affordance::YesNo => {
            let value = match prompt.kind {
                TurnKind::ConfirmBinary => {
                    let truthful = match spec.templates.binary.as_deref() {
                        Some(t) if spec.probes(condition).contains(&crate::agent::ProbeKind::Confirmation) => profile
                            .true_category(&spec.id)
                            .and_then(|c| render_confirmation(t, c).ok())
                            .is_some_and(|expected| prompt.text.ends_with(&expected)),
                        _ => {
                            let template = match profile.tone {
                                Tone::Negative => spec.templates.tone_negative.as_deref(),
                                _ => spec.templates.tone_positive.as_deref(),
                            };
                            template.is_some_and(|t| prompt.text.ends_with(t))
                        }
                    };
                    truthful || rng.random_bool(profile.acquiescence)
                }
                _ if spec.concept == Concept::Consent => true,
                _ => profile.working,
            };
            Action::Answer { input: RespondentInput::YesNo { value }, secs: click }
        }
        Affordance::ChoiceList { options } => {
            let index = if prompt.kind == TurnKind::ConfirmCategorical {
                profile
                    .true_category(&spec.id)
                    .and_then(|c| options.iter().position(|o| o == c))
                    .unwrap_or(options.len() - 1)
            } else if let Some(i) = profile.true_category(&spec.id).and_then(|c| options.iter().position(|o| o == c)) {
                i
            } else if spec.concept == Concept::EconSentiment {
                let matching: Vec<usize> =
                    (0..options.len()).filter(|&i| tone_of_option(&options[i], &tones) == profile.tone).collect();
                *matching.choose(rng).unwrap_or(&0)
            } else {
                rng.random_range(0..options.len())
            };
            Action::Answer { input: RespondentInput::Choice { index }, secs: click }
        }
        Affordance::Likert { labels } => {
            let value = rng.random_range(1..=labels.len());
            Action::Answer { input: RespondentInput::Likert { value }, secs: click }
        }
        Affordance::FreeText => {
            if matches!(spec.format(condition), Format::Numeric { .. }) {
                let text = profile.age.to_string();
                return Action::Answer { input: RespondentInput::text(text), secs: click };
            }
            let is_probe = prompt.kind.is_probe();
            let topic = topic_question(q, spec, is_probe);
            let n = if is_probe {
                match &config.probe_response {
                    ProbeResponse::Ignore => 0,
                    ProbeResponse::FixedTokens { tokens } => *tokens,
                    ProbeResponse::Engaged { length_factor } => token_count(profile.verbosity * length_factor, rng),
                }
            } else {
                token_count(profile.verbosity, rng)
            };
            let text = if n == 0 {
                String::new()
            } else if is_probe && matches!(config.probe_response, ProbeResponse::FixedTokens { .. }) {
                // Exactly n tokens: keywords only, so phrase length cannot overshoot.
                let mut words = Vec::new();
                while words.len() < n {
                    words.push(FILLER.choose(rng).expect("non-empty").to_string());
                }
                words.join(" ")
            } else {
                open_text(profile, q, topic, n, config, &tones, rng)
            };
            let secs = timing.think_secs + timing.secs_per_token * crate::metrics::tokenize(&text).len() as f64;
            Action::Answer { input: RespondentInput::text(text), secs }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub session_id: String,
    pub respondent_id: String,
    pub condition: Condition,
    pub rng_seed: u64,
    pub profile: RespondentProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_per_condition: usize,
    #[serde(default = "all_conditions")]
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn all_conditions() -> Vec<Condition> {
    Condition::ALL.to_vec()
}

fn default_timeout_secs() -> u64 {
    crate::engine::DEFAULT_DROPOUT_TIMEOUT.as_secs()
}

impl ExperimentConfig {
    pub fn new(seed: u64, n_per_condition: usize) -> Self {
        Self {
            seed,
            n_per_condition,
            conditions: all_conditions(),
            population: PopulationConfig::default(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub seed: u64,
    pub n_per_condition: usize,
    pub transcripts: Vec<Transcript>,
    /// Every record, grouped by session in run order.
    pub records: Vec<TranscriptRecord>,
    pub truth: Vec<GroundTruth>,
}

struct Job {
    index: usize,
    condition: Condition,
    respondent_id: String,
    seed: u64,
}

fn run_one(
    q: &Questionnaire,
    job: &Job,
    config: &ExperimentConfig,
    agent: &dyn AgentBackend,
) -> Result<(Vec<TranscriptRecord>, Transcript, GroundTruth), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    rng.set_stream(1);
    let profile = sample_profile(&config.population, q, &mut rng)?;
    let timeout = Duration::from_secs(config.timeout_secs);
    let mut now = Timestamp::from_millis(SIM_EPOCH_MS + job.index as i64 * 1_000);
    let (mut session, _) = start_session(q, job.condition, &job.respondent_id, job.seed, now)?;
    let timing = &config.population.timing;
    while let Some(prompt) = session.pending_prompt.clone().filter(|_| session.is_active()) {
        match respond(&profile, &prompt, q, job.condition, &config.population, &mut rng) {
            Action::Quit => {
                let at = now.plus(timeout).plus_millis(1);
                expire_session(&mut session, at, timeout);
                break;
            }
            Action::Answer { input, secs } => {
                now = now.plus_millis((secs * 1000.0).round() as i64);
                let step = advance(&mut session, q, input, agent, now)?;
                let generated = step.bot_output.as_ref().is_some_and(|p| p.kind.is_probe());
                let secs = if generated { timing.probe_latency_secs } else { timing.bot_latency_secs };
                now = now.plus_millis((secs * 1000.0).round() as i64);
            }
        }
    }
    let truth = GroundTruth {
        session_id: session.id.clone(),
        respondent_id: job.respondent_id.clone(),
        condition: job.condition,
        rng_seed: job.seed,
        profile,
    };
    Ok((session.drain_records(), session.transcript(), truth))
}

/// Run `n_per_condition` respondents in each configured condition. Every
/// session gets its own seed drawn up front from the master seed, so results
/// do not depend on thread scheduling.
pub fn run_experiment(
    q: &Questionnaire,
    config: &ExperimentConfig,
    agent: &dyn AgentBackend,
) -> Result<ExperimentRun, SimError> {
    config.population.validate()?;
    if config.n_per_condition == 0 {
        return Err(SimError::Config("n_per_condition must be at least 1".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut jobs = Vec::new();
    for i in 0..config.n_per_condition {
        for &condition in &config.conditions {
            let index = jobs.len();
            jobs.push(Job {
                index,
                condition,
                respondent_id: format!("sim{}-{condition}-{i:05}", config.seed),
                seed: master.next_u64(),
            });
        }
    }
    let results: Vec<_> = jobs.par_iter().map(|job| run_one(q, job, config, agent)).collect::<Result<_, _>>()?;
    let mut run = ExperimentRun {
        seed: config.seed,
        n_per_condition: config.n_per_condition,
        transcripts: Vec::with_capacity(results.len()),
        records: Vec::new(),
        truth: Vec::with_capacity(results.len()),
    };
    for (records, transcript, truth) in results {
        run.records.extend(records);
        run.transcripts.push(transcript);
        run.truth.push(truth);
    }
    Ok(run)
}

impl ExperimentRun {
    pub fn write_store(&self, store: &Store) -> Result<(), SimError> {
        store.append_all(&self.records)?;
        Ok(())
    }

    /// Ground truth as JSON lines, one session per line.
    pub fn truth_jsonl(&self) -> Result<String, SimError> {
        let mut out = String::new();
        for t in &self.truth {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Ground truth expressed as coder votes for every coded response.
    pub fn truth_votes(&self) -> Vec<CoderVote> {
        let by_session: BTreeMap<&str, &GroundTruth> = self.truth.iter().map(|t| (t.session_id.as_str(), t)).collect();
        let mut votes = Vec::new();
        for t in &self.transcripts {
            let Some(gt) = by_session.get(t.session_id.as_str()) else {
                continue;
            };
            for c in t.codings.iter().filter(|c| c.tone.is_none()) {
                let label = gt
                    .profile
                    .true_category(&c.question_id)
                    .map(|s| CodeLabel::Category(s.to_string()))
                    .unwrap_or(CodeLabel::NoneOfAbove);
                votes.push(CoderVote {
                    key: ResponseKey::new(&t.session_id, &c.question_id),
                    coder_id: GROUND_TRUTH_CODER.into(),
                    label,
                });
            }
        }
        votes
    }

    /// Share of coded responses whose sampled category is the true one,
    /// computed straight from the simulator's knowledge.
    pub fn oracle_precision(&self) -> Option<f64> {
        let by_session: BTreeMap<&str, &GroundTruth> = self.truth.iter().map(|t| (t.session_id.as_str(), t)).collect();
        let (mut hits, mut coded) = (0usize, 0usize);
        for t in &self.transcripts {
            let gt = by_session[t.session_id.as_str()];
            for c in t.codings.iter().filter(|c| c.tone.is_none()) {
                if let Some(sampled) = &c.sampled_for_confirmation {
                    coded += 1;
                    hits += (gt.profile.true_category(&c.question_id) == Some(sampled.as_str())) as usize;
                }
            }
        }
        (coded > 0).then(|| hits as f64 / coded as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::ReferenceBackend;
    use crate::metrics::text::tokens;
    use crate::questionnaire::builtin_study;

    #[test]
    fn filler_is_neutral() {
        let q = builtin_study();
        let tones = ReferenceConfig::default();
        let mut lexicon: Vec<Vec<String>> = q
            .codebooks
            .iter()
            .flat_map(|cb| cb.categories.iter().flat_map(|c| c.lexicon.iter()))
            .chain(q.questions.iter().flat_map(|s| s.relevance_lexicon.iter()))
            .map(|k| tokens(k))
            .collect();
        lexicon.extend(tones.positive_words.iter().chain(&tones.negative_words).map(|w| vec![w.clone()]));
        for w in FILLER {
            assert!(!lexicon.iter().any(|k| k.len() == 1 && k[0] == w), "filler `{w}` hits a lexicon");
        }
    }

    #[test]
    fn degenerate_verbosity() {
        let q = builtin_study();
        let cfg = PopulationConfig { verbosity: Dist::constant(5.0), ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_profile(&cfg, &q, &mut rng).unwrap().verbosity, 5.0);
        }
    }

    #[test]
    fn config_errors() {
        let q = builtin_study();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PopulationConfig { acquiescence: Dist::constant(1.5), ..Default::default() };
        assert!(matches!(sample_profile(&cfg, &q, &mut rng), Err(SimError::Config(_))));
        let cfg = PopulationConfig { verbosity: Dist::constant(0.0), ..Default::default() };
        assert!(matches!(sample_profile(&cfg, &q, &mut rng), Err(SimError::Config(_))));
    }

    fn prompt_for(q: &Questionnaire, category: &str) -> BotPrompt {
        let t = q.question("Q1").unwrap().templates.binary.clone().unwrap();
        BotPrompt {
            question_id: "Q1".into(),
            kind: TurnKind::ConfirmBinary,
            text: render_confirmation(&t, category).unwrap(),
            affordance: Affordance::YesNo,
        }
    }

    fn profile(a: f64, hazard: f64) -> RespondentProfile {
        RespondentProfile {
            verbosity: 8.0,
            acquiescence: a,
            dropout_hazard: hazard,
            typo_rate: 0.0,
            true_categories: BTreeMap::from([("Q1".to_string(), "Crime".to_string())]),
            tone: Tone::Negative,
            working: true,
            age: 40,
        }
    }

    #[test]
    fn confirmation_answers_follow_acquiescence() {
        let q = builtin_study();
        let cfg = PopulationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t1 = Condition::ConfirmationProbes;
        let yes = |a: Action| matches!(a, Action::Answer { input: RespondentInput::YesNo { value: true }, .. });
        for _ in 0..100 {
            assert!(yes(respond(&profile(1.0, 0.0), &prompt_for(&q, "Economy"), &q, t1, &cfg, &mut rng)));
            assert!(!yes(respond(&profile(0.0, 0.0), &prompt_for(&q, "Economy"), &q, t1, &cfg, &mut rng)));
            assert!(yes(respond(&profile(0.0, 0.0), &prompt_for(&q, "Crime"), &q, t1, &cfg, &mut rng)));
        }
    }

    #[test]
    fn small_run_is_reproducible_and_complete() {
        let q = builtin_study();
        let mut cfg = ExperimentConfig::new(11, 1);
        cfg.population.dropout_hazard = Dist::constant(0.0);
        cfg.population.acquiescence = Dist::constant(0.0);
        let agent = ReferenceBackend::default();
        let a = run_experiment(&q, &cfg, &agent).unwrap();
        let b = run_experiment(&q, &cfg, &agent).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.transcripts.len(), 3);
        assert!(a.transcripts.iter().all(|t| t.status == crate::transcript::SessionStatus::Completed));
        assert_eq!(Transcript::from_records(&a.records), a.transcripts);
    }
}
