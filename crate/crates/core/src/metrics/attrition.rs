//! Dropout rates by question and completion counts by condition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::questionnaire::{Condition, Questionnaire};
use crate::transcript::{SessionStatus, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttritionCell {
    pub question_id: String,
    pub condition: Condition,
    /// Sessions that answered this question.
    pub exposed: usize,
    /// Dropped with this question as the last one answered.
    pub immediate: usize,
    /// Dropped at this question or any later one.
    pub anytime: usize,
}

impl AttritionCell {
    pub fn immediate_rate(&self) -> Option<f64> {
        (self.exposed > 0).then(|| self.immediate as f64 / self.exposed as f64)
    }

    pub fn anytime_rate(&self) -> Option<f64> {
        (self.exposed > 0).then(|| self.anytime as f64 / self.exposed as f64)
    }
}

/// Per question × condition dropout counts. Only finished sessions count;
/// declined consents are not attrition.
pub fn attrition(q: &Questionnaire, transcripts: &[Transcript]) -> Vec<AttritionCell> {
    let position = |id: &str| q.position(id);
    let mut cells: BTreeMap<(usize, Condition), AttritionCell> = BTreeMap::new();
    for (i, spec) in q.questions.iter().enumerate() {
        for c in &q.conditions {
            cells.insert(
                (i, *c),
                AttritionCell { question_id: spec.id.clone(), condition: *c, exposed: 0, immediate: 0, anytime: 0 },
            );
        }
    }
    for t in transcripts {
        if !matches!(t.status, SessionStatus::Completed | SessionStatus::DroppedOut) {
            continue;
        }
        let drop_at = match (&t.status, &t.dropout_point) {
            (SessionStatus::DroppedOut, Some(p)) => position(p),
            _ => None,
        };
        for qid in t.answered_questions() {
            let Some(i) = position(qid) else { continue };
            let Some(cell) = cells.get_mut(&(i, t.condition)) else {
                continue;
            };
            cell.exposed += 1;
            if let Some(d) = drop_at {
                if d == i {
                    cell.immediate += 1;
                }
                if d >= i {
                    cell.anytime += 1;
                }
            }
        }
    }
    cells.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompletionCounts {
    pub completes: usize,
    pub dropouts: usize,
    pub declined: usize,
    pub active: usize,
}

impl CompletionCounts {
    pub fn started(&self) -> usize {
        self.completes + self.dropouts
    }

    pub fn dropout_rate(&self) -> Option<f64> {
        (self.started() > 0).then(|| self.dropouts as f64 / self.started() as f64)
    }
}

pub fn completion_counts(transcripts: &[Transcript]) -> BTreeMap<Condition, CompletionCounts> {
    let mut out: BTreeMap<Condition, CompletionCounts> =
        Condition::ALL.iter().map(|c| (*c, Default::default())).collect();
    for t in transcripts {
        let e = out.entry(t.condition).or_default();
        match t.status {
            SessionStatus::Completed => e.completes += 1,
            SessionStatus::DroppedOut => e.dropouts += 1,
            SessionStatus::Declined => e.declined += 1,
            SessionStatus::Active => e.active += 1,
        }
    }
    out
}
