//! Survey instrument model: questions, per-condition formats, codebooks and
//! probe templates, plus the JSON instrument file format.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder substituted with a category name in confirmation templates.
pub const CATEGORY_SLOT: &str = "{category}";

/// Default label for the codebook's "none" option.
pub const DEFAULT_NONE_LABEL: &str = "None of the above";

const BUILTIN_STUDY_JSON: &str = include_str!("../assets/study.json");

/// Experimental arm a session is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Standardized interview, no probes.
    #[serde(rename = "control")]
    Control,
    /// Active coding with confirmation probes.
    #[serde(rename = "t1")]
    ConfirmationProbes,
    /// Elaboration / relevance probes.
    #[serde(rename = "t2")]
    ElabRelevanceProbes,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Control, Condition::ConfirmationProbes, Condition::ElabRelevanceProbes];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Control => "control",
            Condition::ConfirmationProbes => "t1",
            Condition::ElabRelevanceProbes => "t2",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Condition::Control => 0,
            Condition::ConfirmationProbes => 1,
            Condition::ElabRelevanceProbes => 2,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" => Ok(Condition::Control),
            "t1" => Ok(Condition::ConfirmationProbes),
            "t2" => Ok(Condition::ElabRelevanceProbes),
            other => Err(format!("unknown condition `{other}` (expected control, t1 or t2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concept {
    Consent,
    Issue,
    EconSentiment,
    EconReason,
    NewsSource,
    Demographic,
    Occupation,
    Experience,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Opinion,
    Factual,
    Demographic,
    Experience,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Yes/no check of a coded category with a categorical fallback list.
    Confirmation,
    /// Yes/no check of detected sentiment polarity.
    ToneConfirmation,
    Elaboration,
    Relevance,
}

/// How a question is presented in one condition. The prompt text lives with
/// the format because wording differs across arms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Format {
    OpenEnded {
        text: String,
    },
    #[serde(rename = "closed")]
    ClosedSingleChoice {
        text: String,
        options: Vec<String>,
    },
    Numeric {
        text: String,
    },
    #[serde(rename = "skipped")]
    SkippedInThisCondition,
}

impl Format {
    pub fn text(&self) -> Option<&str> {
        match self {
            Format::OpenEnded { text } | Format::ClosedSingleChoice { text, .. } | Format::Numeric { text } => {
                Some(text)
            }
            Format::SkippedInThisCondition => None,
        }
    }

    pub fn is_open_ended(&self) -> bool {
        matches!(self, Format::OpenEnded { .. })
    }

    /// Closed format whose options are exactly Yes / No.
    pub fn is_yes_no(&self) -> bool {
        match self {
            Format::ClosedSingleChoice { options, .. } => {
                options.len() == 2 && options[0].eq_ignore_ascii_case("yes") && options[1].eq_ignore_ascii_case("no")
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lexicon: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// Closed coding frame. The "none" option is not a category: it is carried as
/// a label and appended to categorical fallback lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub id: String,
    pub concept: Concept,
    pub categories: Vec<Category>,
    #[serde(default = "default_none_label")]
    pub none_label: String,
}

fn default_none_label() -> String {
    DEFAULT_NONE_LABEL.to_string()
}

impl Codebook {
    pub fn category(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.category(name).is_some()
    }

    /// Category names followed by the none label, as shown in a categorical
    /// confirmation list.
    pub fn fallback_options(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).chain(std::iter::once(self.none_label.clone())).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    /// Binary confirmation with exactly one `{category}` slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categorical_header: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tone_negative: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tone_positive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elaboration: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<String>,
}

/// Branching rule: ask only when an earlier question's answer equals `equals`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AskIf {
    pub question: String,
    pub equals: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub concept: Concept,
    pub kind: QuestionKind,
    #[serde(rename = "formats")]
    pub per_condition_format: BTreeMap<Condition, Format>,
    #[serde(rename = "codebook", default, skip_serializing_if = "Option::is_none")]
    pub codebook_id: Option<String>,
    #[serde(rename = "probes", default, skip_serializing_if = "BTreeMap::is_empty")]
    pub probes_allowed: BTreeMap<Condition, BTreeSet<ProbeKind>>,
    #[serde(default, skip_serializing_if = "templates_empty")]
    pub templates: Templates,
    /// Shown before the question text (section instructions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preamble: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ask_if: Option<AskIf>,
    /// Words that mark an answer as on-topic for the relevance rule. Falls
    /// back to the codebook lexicons when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relevance_lexicon: Vec<String>,
    /// Concept under which a probe answer is recorded, when it differs from
    /// the seed's concept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_concept: Option<Concept>,
}

fn templates_empty(t: &Templates) -> bool {
    *t == Templates::default()
}

impl QuestionSpec {
    pub fn format(&self, condition: Condition) -> &Format {
        self.per_condition_format.get(&condition).unwrap_or(&Format::SkippedInThisCondition)
    }

    pub fn probes(&self, condition: Condition) -> BTreeSet<ProbeKind> {
        self.probes_allowed.get(&condition).cloned().unwrap_or_default()
    }

    pub fn allows(&self, condition: Condition, kind: ProbeKind) -> bool {
        self.probes_allowed.get(&condition).is_some_and(|set| set.contains(&kind))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub id: String,
    pub title: String,
    #[serde(default = "all_conditions")]
    pub conditions: BTreeSet<Condition>,
    #[serde(default)]
    pub codebooks: Vec<Codebook>,
    pub questions: Vec<QuestionSpec>,
}

fn all_conditions() -> BTreeSet<Condition> {
    Condition::ALL.into_iter().collect()
}

impl Questionnaire {
    pub fn question(&self, id: &str) -> Option<&QuestionSpec> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == id)
    }

    pub fn codebook(&self, id: &str) -> Option<&Codebook> {
        self.codebooks.iter().find(|c| c.id == id)
    }

    pub fn codebook_for(&self, question: &QuestionSpec) -> Option<&Codebook> {
        question.codebook_id.as_deref().and_then(|id| self.codebook(id))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("questionnaire serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateQuestionId { id: String, first: usize, second: usize },
    DuplicateCodebookId { id: String },
    UnknownCodebook { question: String, codebook: String },
    ConfirmationWithoutCodebook { question: String, condition: Condition },
    ControlHasProbes { question: String },
    EmptyOptions { question: String, condition: Condition },
    DuplicateOption { question: String, condition: Condition, option: String },
    DuplicateCategory { codebook: String, name: String },
    NoneLabelIsCategory { codebook: String },
    BadBinaryTemplate { question: String, slots: usize },
    MissingToneTemplates { question: String },
    BadAskIf { question: String, reason: String },
    UnknownCondition { question: String, condition: Condition },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateQuestionId { id, first, second } => {
                write!(f, "question id `{id}` appears at positions {first} and {second}")
            }
            Violation::DuplicateCodebookId { id } => write!(f, "codebook id `{id}` is duplicated"),
            Violation::UnknownCodebook { question, codebook } => {
                write!(f, "question `{question}` references unknown codebook `{codebook}`")
            }
            Violation::ConfirmationWithoutCodebook { question, condition } => {
                write!(f, "question `{question}` allows confirmation probes in {condition} but has no codebook")
            }
            Violation::ControlHasProbes { question } => {
                write!(f, "question `{question}` allows probes in the control condition")
            }
            Violation::EmptyOptions { question, condition } => {
                write!(f, "question `{question}` has no options in {condition}")
            }
            Violation::DuplicateOption { question, condition, option } => {
                write!(f, "question `{question}` repeats option `{option}` in {condition}")
            }
            Violation::DuplicateCategory { codebook, name } => {
                write!(f, "codebook `{codebook}` repeats category `{name}`")
            }
            Violation::NoneLabelIsCategory { codebook } => {
                write!(f, "codebook `{codebook}` lists its none label as a category")
            }
            Violation::BadBinaryTemplate { question, slots } => {
                write!(f, "question `{question}` binary template has {slots} `{CATEGORY_SLOT}` slots (expected 1)")
            }
            Violation::MissingToneTemplates { question } => {
                write!(f, "question `{question}` allows tone confirmation without tone templates")
            }
            Violation::BadAskIf { question, reason } => {
                write!(f, "question `{question}` has an invalid ask_if: {reason}")
            }
            Violation::UnknownCondition { question, condition } => {
                write!(f, "question `{question}` defines {condition}, which the questionnaire does not run")
            }
        }
    }
}

/// Every invariant violation found; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("question `{question}` references unknown codebook `{codebook}`")]
    Reference { question: String, codebook: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid questionnaire: {0}")]
    Invalid(ValidationReport),
}

pub fn parse_questionnaire(document: &str) -> Result<Questionnaire, ParseError> {
    let q: Questionnaire =
        serde_json::from_str(document).map_err(|e| ParseError::Syntax { line: e.line(), reason: e.to_string() })?;
    let report = validate_questionnaire(&q);
    // The most specific error wins; anything else is reported wholesale.
    for v in &report.violations {
        match v {
            Violation::DuplicateQuestionId { id, .. } | Violation::DuplicateCodebookId { id } => {
                return Err(ParseError::DuplicateId(id.clone()))
            }
            Violation::UnknownCodebook { question, codebook } => {
                return Err(ParseError::Reference { question: question.clone(), codebook: codebook.clone() })
            }
            _ => {}
        }
    }
    if report.is_valid() {
        Ok(q)
    } else {
        Err(ParseError::Invalid(report))
    }
}

pub fn validate_questionnaire(q: &Questionnaire) -> ValidationReport {
    let mut violations = Vec::new();

    let mut seen_cb: BTreeSet<&str> = BTreeSet::new();
    for cb in &q.codebooks {
        if !seen_cb.insert(cb.id.as_str()) {
            violations.push(Violation::DuplicateCodebookId { id: cb.id.clone() });
        }
        let mut names = BTreeSet::new();
        for cat in &cb.categories {
            if !names.insert(cat.name.as_str()) {
                violations.push(Violation::DuplicateCategory { codebook: cb.id.clone(), name: cat.name.clone() });
            }
        }
        if names.contains(cb.none_label.as_str()) {
            violations.push(Violation::NoneLabelIsCategory { codebook: cb.id.clone() });
        }
    }

    let mut first_pos: HashMap<&str, usize> = HashMap::new();
    for (pos, question) in q.questions.iter().enumerate() {
        if let Some(&first) = first_pos.get(question.id.as_str()) {
            violations.push(Violation::DuplicateQuestionId { id: question.id.clone(), first, second: pos });
        } else {
            first_pos.insert(&question.id, pos);
        }

        let codebook_known = match &question.codebook_id {
            Some(id) if q.codebook(id).is_none() => {
                violations.push(Violation::UnknownCodebook { question: question.id.clone(), codebook: id.clone() });
                false
            }
            Some(_) => true,
            None => false,
        };

        for (&condition, format) in &question.per_condition_format {
            if !q.conditions.contains(&condition) {
                violations.push(Violation::UnknownCondition { question: question.id.clone(), condition });
            }
            if let Format::ClosedSingleChoice { options, .. } = format {
                if options.is_empty() {
                    violations.push(Violation::EmptyOptions { question: question.id.clone(), condition });
                }
                let mut seen = BTreeSet::new();
                for opt in options {
                    if !seen.insert(opt.as_str()) {
                        violations.push(Violation::DuplicateOption {
                            question: question.id.clone(),
                            condition,
                            option: opt.clone(),
                        });
                    }
                }
            }
        }

        if question.probes_allowed.get(&Condition::Control).is_some_and(|set| !set.is_empty()) {
            violations.push(Violation::ControlHasProbes { question: question.id.clone() });
        }

        let mut wants_binary = false;
        let mut wants_tone = false;
        for (&condition, kinds) in &question.probes_allowed {
            if kinds.contains(&ProbeKind::Confirmation) {
                wants_binary = true;
                if question.codebook_id.is_none() {
                    violations
                        .push(Violation::ConfirmationWithoutCodebook { question: question.id.clone(), condition });
                }
            }
            wants_tone |= kinds.contains(&ProbeKind::ToneConfirmation);
        }
        if wants_binary && (codebook_known || question.codebook_id.is_none()) {
            let slots = question.templates.binary.as_deref().map_or(0, |t| t.matches(CATEGORY_SLOT).count());
            if slots != 1 {
                violations.push(Violation::BadBinaryTemplate { question: question.id.clone(), slots });
            }
        }
        if wants_tone && (question.templates.tone_negative.is_none() || question.templates.tone_positive.is_none()) {
            violations.push(Violation::MissingToneTemplates { question: question.id.clone() });
        }

        if let Some(rule) = &question.ask_if {
            match q.position(&rule.question) {
                None => violations.push(Violation::BadAskIf {
                    question: question.id.clone(),
                    reason: format!("unknown question `{}`", rule.question),
                }),
                Some(p) if p >= pos => violations.push(Violation::BadAskIf {
                    question: question.id.clone(),
                    reason: format!("`{}` is not asked earlier", rule.question),
                }),
                Some(_) => {}
            }
        }
    }

    ValidationReport { violations }
}

/// The shipped three-arm instrument: consent, four embedded experiments,
/// demographics and experience items.
pub fn builtin_study() -> Questionnaire {
    parse_questionnaire(BUILTIN_STUDY_JSON).expect("built-in study is valid")
}

/// Raw JSON of the shipped instrument.
pub fn builtin_study_json() -> &'static str {
    BUILTIN_STUDY_JSON
}
