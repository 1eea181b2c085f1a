//! Tokenization and per-response informational measures (lexical diversity,
//! Shannon entropy, KL divergence from the question corpus). Natural log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub counts: BTreeMap<String, u64>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unique(&self) -> usize {
        self.counts.len()
    }
}

/// Whitespace split, lowercase, strip leading/trailing punctuation. Tokens
/// that are pure punctuation vanish.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    let mut counts = BTreeMap::new();
    for raw in text.split_whitespace() {
        let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if trimmed.is_empty() {
            continue;
        }
        let token = trimmed.to_lowercase();
        *counts.entry(token.clone()).or_insert(0) += 1;
        tokens.push(token);
    }
    TokenizedText { tokens, counts }
}

/// Token list only; the common case for matching.
pub fn tokens(text: &str) -> Vec<String> {
    tokenize(text).tokens
}

pub fn lexical_diversity(text: &str) -> Result<f64, MetricError> {
    let t = tokenize(text);
    if t.is_empty() {
        return Err(MetricError::EmptyText);
    }
    Ok(t.unique() as f64 / t.len() as f64)
}

pub fn shannon_entropy(text: &str) -> Result<f64, MetricError> {
    let t = tokenize(text);
    if t.is_empty() {
        return Err(MetricError::EmptyText);
    }
    let n = t.len() as f64;
    Ok(t.counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Word distribution over all responses to one question.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDistribution {
    pub question_id: String,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl CorpusDistribution {
    pub fn new(question_id: impl Into<String>) -> Self {
        Self { question_id: question_id.into(), ..Default::default() }
    }

    pub fn from_texts<'a>(question_id: impl Into<String>, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut corpus = Self::new(question_id);
        for text in texts {
            corpus.add(text);
        }
        corpus
    }

    pub fn add(&mut self, text: &str) {
        for (token, c) in tokenize(text).counts {
            *self.counts.entry(token).or_insert(0) += c;
            self.total += c;
        }
    }

    pub fn probability(&self, token: &str) -> Option<f64> {
        match self.counts.get(token) {
            Some(&c) if c > 0 && self.total > 0 => Some(c as f64 / self.total as f64),
            _ => None,
        }
    }
}

/// `Σ p ln(p/q)` over the response's unique tokens.
pub fn kl_divergence(text: &str, corpus: &CorpusDistribution) -> Result<f64, MetricError> {
    let t = tokenize(text);
    if t.is_empty() {
        return Err(MetricError::EmptyText);
    }
    let n = t.len() as f64;
    let mut sum = 0.0;
    for (token, &c) in &t.counts {
        let q = corpus.probability(token).ok_or_else(|| MetricError::OutOfCorpusToken(token.clone()))?;
        let p = c as f64 / n;
        sum += p * (p / q).ln();
    }
    Ok(sum)
}

/// Seed and post-probe answers joined for combined-response outcomes.
pub fn combine_segments(seed: &str, post_probe: Option<&str>) -> String {
    match post_probe {
        Some(extra) => format!("{seed} {extra}"),
        None => seed.to_string(),
    }
}
