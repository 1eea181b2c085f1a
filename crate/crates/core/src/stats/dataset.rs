//! Per-session analysis rows and the tidy CSV exchange format.
//!
//! Default encodings: demographic questions become covariates named by their
//! lower-cased question id; numeric answers stay numeric, closed answers are
//! categorical and get dummy-coded with the alphabetically first level as
//! the baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::metrics::{lexical_diversity, segment_text, shannon_entropy, tokenize, Segment};
use crate::questionnaire::{Concept, Condition, Format, Questionnaire};
use crate::transcript::{SessionStatus, Speaker, Transcript, TurnKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariate {
    Numeric(f64),
    Categorical(String),
}

impl Covariate {
    fn parse(cell: &str) -> Option<Self> {
        let cell = cell.trim();
        if cell.is_empty() {
            return None;
        }
        Some(match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Covariate::Numeric(v),
            _ => Covariate::Categorical(cell.to_string()),
        })
    }

    fn render(&self) -> String {
        match self {
            Covariate::Numeric(v) => v.to_string(),
            Covariate::Categorical(s) => s.clone(),
        }
    }

    pub fn label(&self) -> String {
        self.render()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub session_id: String,
    pub condition: Condition,
    pub outcomes: BTreeMap<String, f64>,
    pub covariates: BTreeMap<String, Covariate>,
}

fn respondent_answer<'a>(t: &'a Transcript, question_id: &str) -> Option<&'a str> {
    t.exchange(question_id)
        .into_iter()
        .find(|x| x.speaker == Speaker::Respondent && x.kind == TurnKind::Answer)
        .map(|x| x.text.as_str())
}

/// One row per finished session (completes and dropouts).
pub fn session_dataset(q: &Questionnaire, transcripts: &[Transcript]) -> Vec<SessionRow> {
    let mut rows = Vec::new();
    for t in transcripts {
        if !matches!(t.status, SessionStatus::Completed | SessionStatus::DroppedOut) {
            continue;
        }
        let mut outcomes = BTreeMap::new();
        let mut covariates = BTreeMap::new();
        outcomes.insert("completed".to_string(), (t.status == SessionStatus::Completed) as u8 as f64);
        if let Some(ms) = t.duration_millis() {
            outcomes.insert("duration_min".to_string(), ms as f64 / 60_000.0);
        }
        for spec in &q.questions {
            let id = spec.id.to_lowercase();
            let format = spec.format(t.condition);
            if format.is_open_ended() {
                if let Some(seed) = segment_text(t, &spec.id, Segment::Seed) {
                    outcomes.insert(format!("{id}_words_seed"), tokenize(&seed).len() as f64);
                }
                if let Some(combined) = segment_text(t, &spec.id, Segment::Combined) {
                    outcomes.insert(format!("{id}_words_combined"), tokenize(&combined).len() as f64);
                    if let Ok(d) = lexical_diversity(&combined) {
                        outcomes.insert(format!("{id}_diversity_combined"), d);
                    }
                    if let Ok(h) = shannon_entropy(&combined) {
                        outcomes.insert(format!("{id}_entropy_combined"), h);
                    }
                }
                continue;
            }
            let Some(answer) = respondent_answer(t, &spec.id) else {
                continue;
            };
            match (spec.concept, format) {
                (Concept::Experience, Format::ClosedSingleChoice { options, .. }) if options.len() > 1 => {
                    if let Some(i) = options.iter().position(|o| o == answer) {
                        outcomes.insert(format!("{id}_likert"), i as f64 / (options.len() - 1) as f64);
                    }
                }
                (Concept::Demographic, Format::Numeric { .. }) => {
                    if let Ok(v) = answer.trim().parse::<f64>() {
                        covariates.insert(id, Covariate::Numeric(v));
                    }
                }
                (Concept::Demographic, Format::ClosedSingleChoice { .. }) => {
                    covariates.insert(id, Covariate::Categorical(answer.to_string()));
                }
                _ => {}
            }
        }
        rows.push(SessionRow { session_id: t.session_id.clone(), condition: t.condition, outcomes, covariates });
    }
    rows
}

/// Columns: session_id, condition, outcome, value, then one column per
/// covariate (empty when missing).
pub fn write_tidy_csv(rows: &[SessionRow], writer: impl Write) -> Result<(), StatsError> {
    let err = |e: csv::Error| StatsError::Dataset(e.to_string());
    let names: BTreeSet<&String> = rows.iter().flat_map(|r| r.covariates.keys()).collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["session_id", "condition", "outcome", "value"];
    header.extend(names.iter().map(|s| s.as_str()));
    w.write_record(&header).map_err(err)?;
    for r in rows {
        for (outcome, value) in &r.outcomes {
            let mut rec = vec![r.session_id.clone(), r.condition.to_string(), outcome.clone(), value.to_string()];
            rec.extend(names.iter().map(|n| r.covariates.get(*n).map(Covariate::render).unwrap_or_default()));
            w.write_record(&rec).map_err(err)?;
        }
    }
    w.flush().map_err(|e| StatsError::Dataset(e.to_string()))
}

pub fn read_tidy_csv(reader: impl Read) -> Result<Vec<SessionRow>, StatsError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| StatsError::Dataset(e.to_string()))?.clone();
    let fixed = ["session_id", "condition", "outcome", "value"];
    for (i, name) in fixed.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(StatsError::Dataset(format!("column {} must be `{name}`", i + 1)));
        }
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, SessionRow> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| StatsError::Dataset(e.to_string()))?;
        let at = |msg: String| StatsError::Dataset(format!("line {}: {msg}", line + 2));
        let session_id = rec[0].to_string();
        let condition: Condition = rec[1].parse().map_err(|e: String| at(e))?;
        let value: f64 = rec[3].trim().parse().map_err(|_| at(format!("value `{}` is not a number", &rec[3])))?;
        let row = by_id.entry(session_id.clone()).or_insert_with(|| {
            order.push(session_id.clone());
            SessionRow { session_id, condition, outcomes: BTreeMap::new(), covariates: BTreeMap::new() }
        });
        if row.condition != condition {
            return Err(at("session appears under two conditions".into()));
        }
        row.outcomes.insert(rec[2].to_string(), value);
        for (j, name) in headers.iter().enumerate().skip(4) {
            if let Some(c) = rec.get(j).and_then(Covariate::parse) {
                row.covariates.insert(name.to_string(), c);
            }
        }
    }
    Ok(order.into_iter().filter_map(|id| by_id.remove(&id)).collect())
}
