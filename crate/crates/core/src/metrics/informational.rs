//! Informational text measures for open-ended answers, by question,
//! condition and segment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::quality::Segment;
use super::text::{combine_segments, kl_divergence, lexical_diversity, shannon_entropy, tokenize, CorpusDistribution};
use crate::questionnaire::{Condition, Questionnaire};
use crate::transcript::Transcript;

/// The text of one segment of a respondent's answer, if it exists.
pub fn segment_text(t: &Transcript, question_id: &str, segment: Segment) -> Option<String> {
    let seed = t.seed_answer(question_id)?;
    let post = t.post_probe_answer(question_id);
    match segment {
        Segment::Seed => Some(seed.to_string()),
        Segment::PostProbe => post.map(str::to_string),
        Segment::Combined => Some(combine_segments(seed, post)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextMeasures {
    pub question_id: String,
    pub condition: Condition,
    pub segment: Segment,
    /// Responses with at least one token.
    pub n: usize,
    /// Empty responses, left out of the three means below.
    pub excluded: usize,
    pub mean_words: Option<f64>,
    pub mean_lexical_diversity: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub mean_kl: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Measures for every question that is open-ended in at least one condition.
/// The KL reference corpus for a question and segment pools every response
/// in the sample, across conditions.
pub fn informational_measures(q: &Questionnaire, transcripts: &[Transcript]) -> Vec<TextMeasures> {
    let mut out = Vec::new();
    for spec in &q.questions {
        if !q.conditions.iter().any(|c| spec.format(*c).is_open_ended()) {
            continue;
        }
        for segment in [Segment::Seed, Segment::PostProbe, Segment::Combined] {
            let texts: Vec<(Condition, String)> = transcripts
                .iter()
                .filter(|t| spec.format(t.condition).is_open_ended())
                .filter_map(|t| segment_text(t, &spec.id, segment).map(|s| (t.condition, s)))
                .collect();
            let corpus = CorpusDistribution::from_texts(&spec.id, texts.iter().map(|(_, s)| s.as_str()));
            let mut by_cond: BTreeMap<Condition, [Vec<f64>; 4]> = BTreeMap::new();
            let mut excluded: BTreeMap<Condition, usize> = BTreeMap::new();
            for (c, text) in &texts {
                let acc = by_cond.entry(*c).or_default();
                acc[0].push(tokenize(text).len() as f64);
                match (lexical_diversity(text), shannon_entropy(text), kl_divergence(text, &corpus)) {
                    (Ok(d), Ok(h), Ok(kl)) => {
                        acc[1].push(d);
                        acc[2].push(h);
                        acc[3].push(kl);
                    }
                    _ => *excluded.entry(*c).or_default() += 1,
                }
            }
            for c in &q.conditions {
                if !spec.format(*c).is_open_ended() {
                    continue;
                }
                let empty: [Vec<f64>; 4] = Default::default();
                let acc = by_cond.get(c).unwrap_or(&empty);
                out.push(TextMeasures {
                    question_id: spec.id.clone(),
                    condition: *c,
                    segment,
                    n: acc[1].len(),
                    excluded: excluded.get(c).copied().unwrap_or(0),
                    mean_words: mean(&acc[0]),
                    mean_lexical_diversity: mean(&acc[1]),
                    mean_entropy: mean(&acc[2]),
                    mean_kl: mean(&acc[3]),
                });
            }
        }
    }
    out
}
