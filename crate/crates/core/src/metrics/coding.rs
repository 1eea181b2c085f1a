//! Active-coding performance: accuracy, precision and recall against either
//! respondent confirmations or majority coder labels, and the coder
//! confusion matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::agent::{Coding, ConfirmationOutcome};
use crate::questionnaire::DEFAULT_NONE_LABEL;
use crate::transcript::Transcript;

/// A ratio that keeps its parts; undefined when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: usize,
    pub denominator: usize,
}

impl Ratio {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        debug_assert!(numerator <= denominator);
        Self { numerator, denominator }
    }

    pub fn value(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    RespondentConfirmation,
    CoderLabels,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResponseKey {
    pub session_id: String,
    pub question_id: String,
}

impl ResponseKey {
    pub fn new(session_id: impl Into<String>, question_id: impl Into<String>) -> Self {
        Self { session_id: session_id.into(), question_id: question_id.into() }
    }
}

impl std::fmt::Display for ResponseKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.session_id, self.question_id)
    }
}

/// One coded (or uncoded) response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingRecord {
    pub key: ResponseKey,
    pub coding: Coding,
}

/// What a coder assigned to a response.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "name", rename_all = "snake_case")]
pub enum CodeLabel {
    Category(String),
    NoneOfAbove,
}

impl CodeLabel {
    /// Empty text, "none" and the none sentinels map to [`CodeLabel::NoneOfAbove`].
    pub fn parse(text: &str) -> Self {
        let t = text.trim();
        if t.is_empty() || t.eq_ignore_ascii_case("none") || t.starts_with(DEFAULT_NONE_LABEL) {
            CodeLabel::NoneOfAbove
        } else {
            CodeLabel::Category(t.to_string())
        }
    }

    pub fn name(&self) -> &str {
        match self {
            CodeLabel::Category(c) => c,
            CodeLabel::NoneOfAbove => DEFAULT_NONE_LABEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoderVote {
    pub key: ResponseKey,
    pub coder_id: String,
    pub label: CodeLabel,
}

/// Category codings from transcripts (tone codings excluded).
pub fn coding_records(transcripts: &[Transcript]) -> Vec<CodingRecord> {
    transcripts
        .iter()
        .flat_map(|t| {
            t.codings
                .iter()
                .filter(|c| c.tone.is_none())
                .map(|c| CodingRecord { key: ResponseKey::new(&t.session_id, &c.question_id), coding: c.clone() })
        })
        .collect()
}

/// Plurality label per response. Ties are unresolved and left out.
pub fn majority_labels(votes: &[CoderVote]) -> BTreeMap<ResponseKey, CodeLabel> {
    let mut tallies: BTreeMap<&ResponseKey, BTreeMap<&CodeLabel, usize>> = BTreeMap::new();
    for v in votes {
        *tallies.entry(&v.key).or_default().entry(&v.label).or_default() += 1;
    }
    tallies
        .into_iter()
        .filter_map(|(key, counts)| {
            let top = *counts.values().max()?;
            let mut winners = counts.into_iter().filter(|(_, n)| *n == top);
            let (label, _) = winners.next()?;
            winners.next().is_none().then(|| (key.clone(), label.clone()))
        })
        .collect()
}

/// Read coder category labels: columns `session_id, question_id, coder_id,
/// category` (empty or a none label means none of the above).
pub fn read_coder_votes(reader: impl Read) -> Result<Vec<CoderVote>, MetricError> {
    #[derive(Deserialize)]
    struct Row {
        session_id: String,
        question_id: String,
        coder_id: String,
        #[serde(default)]
        category: String,
    }
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize::<Row>() {
        let row = row.map_err(|e| MetricError::Schema(e.to_string()))?;
        out.push(CoderVote {
            key: ResponseKey::new(row.session_id, row.question_id),
            coder_id: row.coder_id,
            label: CodeLabel::parse(&row.category),
        });
    }
    Ok(out)
}

pub fn write_coder_votes(votes: &[CoderVote], writer: impl std::io::Write) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(writer);
    let schema = |e: csv::Error| MetricError::Schema(e.to_string());
    w.write_record(["session_id", "question_id", "coder_id", "category"]).map_err(schema)?;
    for v in votes {
        let cat = match &v.label {
            CodeLabel::Category(c) => c.as_str(),
            CodeLabel::NoneOfAbove => "",
        };
        w.write_record([&v.key.session_id, &v.key.question_id, &v.coder_id, cat]).map_err(schema)?;
    }
    w.flush().map_err(|e| MetricError::Schema(e.to_string()))
}

/// Keep only records that have a label, e.g. the human-coded subsample.
pub fn restrict_to_labeled(records: &[CodingRecord], labels: &BTreeMap<ResponseKey, CodeLabel>) -> Vec<CodingRecord> {
    records.iter().filter(|r| labels.contains_key(&r.key)).cloned().collect()
}

/// Accuracy, precision and recall for one set of records.
///
/// Respondent confirmation: a coding is correct when confirmed "yes"; a
/// non-coding is correct when the respondent picked none of the above.
/// Recall's denominator adds every category the respondent picked from the
/// fallback list. Records without a confirmation outcome are left out.
///
/// Coder labels: a coding is correct when the sampled category equals the
/// majority label; a non-coding is correct when the label is none. Recall's
/// denominator is every response whose label is a category.
pub fn coding_performance(
    records: &[CodingRecord],
    truth: Truth,
    labels: Option<&BTreeMap<ResponseKey, CodeLabel>>,
) -> Result<Prf, MetricError> {
    match truth {
        Truth::RespondentConfirmation => Ok(by_confirmation(records)),
        Truth::CoderLabels => {
            let labels = labels.ok_or_else(|| MetricError::MissingLabels("no coder labels given".into()))?;
            by_labels(records, labels)
        }
    }
}

fn by_confirmation(records: &[CodingRecord]) -> Prf {
    let (mut yes, mut coded, mut agree, mut total, mut selections) = (0, 0, 0, 0, 0);
    for r in records {
        let Some(outcome) = &r.coding.outcome else {
            continue;
        };
        total += 1;
        let is_coded = r.coding.is_coded();
        if is_coded {
            coded += 1;
        }
        match outcome {
            ConfirmationOutcome::ConfirmedYes => {
                yes += 1;
                agree += 1;
            }
            ConfirmationOutcome::NoneOfAbove if !is_coded => agree += 1,
            ConfirmationOutcome::CategoricalSelection(_) => selections += 1,
            _ => {}
        }
    }
    Prf {
        accuracy: Ratio::new(agree, total),
        precision: Ratio::new(yes, coded),
        recall: Ratio::new(yes, yes + selections),
    }
}

fn by_labels(records: &[CodingRecord], labels: &BTreeMap<ResponseKey, CodeLabel>) -> Result<Prf, MetricError> {
    let (mut hits, mut coded, mut agree, mut positives) = (0, 0, 0, 0);
    for r in records {
        let label = labels.get(&r.key).ok_or_else(|| MetricError::MissingLabels(r.key.to_string()))?;
        if matches!(label, CodeLabel::Category(_)) {
            positives += 1;
        }
        match &r.coding.sampled_for_confirmation {
            Some(sampled) => {
                coded += 1;
                if matches!(label, CodeLabel::Category(c) if c == sampled) {
                    hits += 1;
                    agree += 1;
                }
            }
            None => {
                if *label == CodeLabel::NoneOfAbove {
                    agree += 1;
                }
            }
        }
    }
    Ok(Prf {
        accuracy: Ratio::new(agree, records.len()),
        precision: Ratio::new(hits, coded),
        recall: Ratio::new(hits, positives),
    })
}

/// Rows are what the textbot coded (none when uncoded), columns the
/// majority coder label. The none label sorts last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    fn index(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn cell(&self, coded: &str, labeled: &str) -> usize {
        match (self.index(coded), self.index(labeled)) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn diagonal(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn off_diagonal(&self) -> usize {
        self.total() - self.diagonal()
    }

    pub fn is_diagonal(&self) -> bool {
        self.off_diagonal() == 0
    }
}

pub fn confusion_matrix(
    records: &[CodingRecord],
    labels: &BTreeMap<ResponseKey, CodeLabel>,
) -> Result<ConfusionMatrix, MetricError> {
    let mut pairs = Vec::with_capacity(records.len());
    let mut names: BTreeSet<String> = BTreeSet::new();
    for r in records {
        let label = labels.get(&r.key).ok_or_else(|| MetricError::MissingLabels(r.key.to_string()))?;
        let coded =
            r.coding.sampled_for_confirmation.clone().map(CodeLabel::Category).unwrap_or(CodeLabel::NoneOfAbove);
        for l in [&coded, label] {
            if let CodeLabel::Category(c) = l {
                names.insert(c.clone());
            }
        }
        pairs.push((coded, label.clone()));
    }
    let mut order: Vec<String> = names.into_iter().collect();
    order.push(DEFAULT_NONE_LABEL.to_string());
    let mut m = ConfusionMatrix { counts: vec![vec![0; order.len()]; order.len()], labels: order };
    for (coded, label) in pairs {
        let i = m.index(coded.name()).expect("label registered");
        let j = m.index(label.name()).expect("label registered");
        m.counts[i][j] += 1;
    }
    Ok(m)
}
