use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    AgentBackend, AgentError, Coding, DetectedCategory, ProbeDecision, ProbeDecisionKind, ProbeKind, QuestionContext,
    Tone, DEFAULT_ELABORATION_PROBE, DEFAULT_RELEVANCE_PROBE,
};
use crate::metrics::text::tokens;

/// Tunables for the deterministic reference agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    /// On-topic answers shorter than this (in tokens) get an elaboration probe.
    pub elaboration_threshold: usize,
    pub positive_words: Vec<String>,
    pub negative_words: Vec<String>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        Self {
            elaboration_threshold: 12,
            positive_words: words(&[
                "good",
                "great",
                "excellent",
                "strong",
                "improving",
                "better",
                "booming",
                "healthy",
                "growing",
                "positive",
                "fine",
                "decent",
                "stable",
                "thriving",
                "solid",
            ]),
            negative_words: words(&[
                "bad",
                "poor",
                "terrible",
                "worse",
                "worst",
                "weak",
                "struggling",
                "declining",
                "awful",
                "horrible",
                "negative",
                "unaffordable",
                "dire",
                "collapsing",
                "failing",
            ]),
        }
    }
}

/// Lexicon/rule agent. Pure function of its config and inputs.
#[derive(Debug, Clone, Default)]
pub struct ReferenceBackend {
    config: ReferenceConfig,
}

impl ReferenceBackend {
    pub fn new(config: ReferenceConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }
}

/// Keyword phrase occurs as a contiguous token run.
fn phrase_matches(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

fn count_phrase_hits<'a>(haystack: &[String], lexicon: impl IntoIterator<Item = &'a String>) -> usize {
    lexicon.into_iter().filter(|kw| phrase_matches(haystack, &tokens(kw))).count()
}

impl ReferenceBackend {
    fn sentiment_of(&self, toks: &[String]) -> Tone {
        let hits = |words: &[String]| toks.iter().filter(|t| words.contains(t)).count();
        let pos = hits(&self.config.positive_words);
        let neg = hits(&self.config.negative_words);
        match (pos > 0, neg > 0) {
            (true, false) => Tone::Positive,
            (false, true) => Tone::Negative,
            _ => Tone::Indeterminate,
        }
    }
}

impl AgentBackend for ReferenceBackend {
    fn code_response(&self, ctx: QuestionContext<'_>, text: &str) -> Result<Coding, AgentError> {
        let codebook = ctx.codebook.ok_or_else(|| AgentError::NoCodebook(ctx.spec.id.clone()))?;
        let toks = tokens(text);
        let mut coding = Coding::empty(&ctx.spec.id);
        if toks.is_empty() {
            return Ok(coding);
        }
        for category in &codebook.categories {
            if category.lexicon.is_empty() {
                continue;
            }
            let hits = count_phrase_hits(&toks, &category.lexicon);
            if hits > 0 {
                coding.detected.push(DetectedCategory {
                    name: category.name.clone(),
                    score: hits as f64 / category.lexicon.len() as f64,
                });
            }
        }
        Ok(coding)
    }

    fn classify_sentiment(&self, _ctx: QuestionContext<'_>, text: &str) -> Result<Tone, AgentError> {
        Ok(self.sentiment_of(&tokens(text)))
    }

    fn decide_probe(
        &self,
        ctx: QuestionContext<'_>,
        seed_text: &str,
        allowed: &BTreeSet<ProbeKind>,
    ) -> Result<ProbeDecision, AgentError> {
        let can_elaborate = allowed.contains(&ProbeKind::Elaboration);
        let can_relevance = allowed.contains(&ProbeKind::Relevance);
        if !can_elaborate && !can_relevance {
            return Ok(ProbeDecision::none("not_allowed"));
        }

        let toks = tokens(seed_text);
        let codebook_hits =
            ctx.codebook.map(|cb| cb.categories.iter().map(|c| count_phrase_hits(&toks, &c.lexicon)).sum::<usize>());
        let topical: Vec<&String> = if ctx.spec.relevance_lexicon.is_empty() {
            ctx.codebook.map(|cb| cb.categories.iter().flat_map(|c| c.lexicon.iter()).collect()).unwrap_or_default()
        } else {
            ctx.spec.relevance_lexicon.iter().collect()
        };
        let on_topic = topical.is_empty() || count_phrase_hits(&toks, topical.iter().copied()) > 0;
        // Without a codebook, being on topic is the only specificity signal.
        let specific = codebook_hits.map_or(on_topic, |h| h > 0);

        let templates = &ctx.spec.templates;
        let elaboration = || templates.elaboration.clone().unwrap_or_else(|| DEFAULT_ELABORATION_PROBE.to_string());
        let relevance = || templates.relevance.clone().unwrap_or_else(|| DEFAULT_RELEVANCE_PROBE.to_string());

        let irrelevant_reason = if toks.is_empty() {
            Some("empty")
        } else if toks.len() < 2 {
            Some("too_short")
        } else if !on_topic {
            Some("off_topic")
        } else {
            None
        };
        if let Some(reason) = irrelevant_reason {
            return Ok(if can_relevance {
                ProbeDecision::probe(ProbeDecisionKind::Relevance, relevance(), reason)
            } else {
                ProbeDecision::probe(ProbeDecisionKind::Elaboration, elaboration(), reason)
            });
        }

        let short = toks.len() < self.config.elaboration_threshold;
        if short || !specific {
            let reason = if short { "short" } else { "unspecific" };
            return Ok(if can_elaborate {
                ProbeDecision::probe(ProbeDecisionKind::Elaboration, elaboration(), reason)
            } else {
                ProbeDecision::none(reason)
            });
        }
        Ok(ProbeDecision::none("sufficient"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::questionnaire::{builtin_study, Condition, Questionnaire};
    use proptest::prelude::*;

    fn ctx<'a>(q: &'a Questionnaire, id: &str, condition: Condition) -> QuestionContext<'a> {
        let spec = q.question(id).unwrap();
        QuestionContext {
            spec,
            prompt_text: spec.format(condition).text().unwrap_or(""),
            codebook: q.codebook_for(spec),
        }
    }

    fn names(c: &Coding) -> Vec<&str> {
        c.detected_names().collect()
    }

    const T2: Condition = Condition::ElabRelevanceProbes;
    const T1: Condition = Condition::ConfirmationProbes;

    #[test]
    fn codes_economy_and_inflation() {
        let q = builtin_study();
        let agent = ReferenceBackend::default();
        let c = agent.code_response(ctx(&q, "Q1", T1), "the economy and inflation").unwrap();
        assert_eq!(names(&c), vec!["Economy", "Cost of Living"]);
        // economy: 1 of 4 keywords; cost of living: 1 of 7.
        assert_eq!(c.detected[0].score, 0.25);
        assert_eq!(c.detected[1].score, 1.0 / 7.0);
    }

    #[test]
    fn codes_inflation_complaint() {
        let q = builtin_study();
        let c = ReferenceBackend::default().code_response(ctx(&q, "Q1", T1), "inflation is killing us").unwrap();
        assert_eq!(names(&c), vec!["Cost of Living"]);
    }

    #[test]
    fn empty_and_ambiguous_answers_code_nothing() {
        let q = builtin_study();
        let agent = ReferenceBackend::default();
        assert!(agent.code_response(ctx(&q, "Q1", T1), "").unwrap().detected.is_empty());
        assert!(agent.code_response(ctx(&q, "Q9", T1), "Contractor").unwrap().detected.is_empty());
    }

    #[test]
    fn phrase_keywords_need_contiguous_tokens() {
        let q = builtin_study();
        let agent = ReferenceBackend::default();
        let c = agent.code_response(ctx(&q, "Q4", T1), "The New York Times, mostly").unwrap();
        assert_eq!(names(&c), vec!["The New York Times"]);
        let c = agent.code_response(ctx(&q, "Q4", T1), "times in new york").unwrap();
        assert!(c.detected.is_empty());
    }

    #[test]
    fn sentiment_votes() {
        let q = builtin_study();
        let agent = ReferenceBackend::default();
        let c = ctx(&q, "Q2", T1);
        assert_eq!(agent.classify_sentiment(c, "good").unwrap(), Tone::Positive);
        assert_eq!(agent.classify_sentiment(c, "bad and getting worse").unwrap(), Tone::Negative);
        assert_eq!(agent.classify_sentiment(c, "good in parts, bad in others").unwrap(), Tone::Indeterminate);
        assert_eq!(agent.classify_sentiment(c, "").unwrap(), Tone::Indeterminate);
    }

    #[test]
    fn probe_examples() {
        let q = builtin_study();
        let agent = ReferenceBackend::default();
        let allowed: BTreeSet<_> = [ProbeKind::Elaboration, ProbeKind::Relevance].into();

        let d = agent.decide_probe(ctx(&q, "Q1", T2), "Economy and inflation", &allowed).unwrap();
        assert_eq!(d.kind, ProbeDecisionKind::Elaboration);
        assert_eq!(d.text.as_deref(), Some("Could you be more specific?"));

        let d = agent.decide_probe(ctx(&q, "Q2", T2), "good", &allowed).unwrap();
        assert_eq!(d.kind, ProbeDecisionKind::Relevance);
        assert_eq!(d.text.as_deref(), Some(DEFAULT_RELEVANCE_PROBE));

        let long = "I honestly think the biggest problem is inflation because prices for \
                    groceries and rent keep going up every single month and my paycheck does \
                    not stretch nearly as far as it used to when my kids were still little \
                    and living at home with us";
        assert!(tokens(long).len() >= 40);
        let d = agent.decide_probe(ctx(&q, "Q1", T2), long, &allowed).unwrap();
        assert_eq!(d.kind, ProbeDecisionKind::None);
        assert!(d.text.is_none());
    }

    #[test]
    fn off_topic_and_empty_trigger_relevance() {
        let q = builtin_study();
        let agent = ReferenceBackend::default();
        let allowed: BTreeSet<_> = [ProbeKind::Elaboration, ProbeKind::Relevance].into();
        for seed in ["", "per week 35 hours", "Contractor"] {
            let d = agent.decide_probe(ctx(&q, "Q9", T2), seed, &allowed).unwrap();
            assert_eq!(d.kind, ProbeDecisionKind::Relevance, "{seed:?}");
        }
    }

    #[test]
    fn no_allowed_kinds_means_no_probe() {
        let q = builtin_study();
        let d = ReferenceBackend::default().decide_probe(ctx(&q, "Q1", T2), "", &BTreeSet::new()).unwrap();
        assert_eq!(d, ProbeDecision::none("not_allowed"));
    }

    #[test]
    fn never_emits_hybrid_or_none_sentinel() {
        let q = builtin_study();
        let agent = ReferenceBackend::default();
        let news = q.codebook("news_sources").unwrap();
        let c = agent.code_response(ctx(&q, "Q4", T1), "None of the above match my answer").unwrap();
        assert!(c.detected_names().all(|n| n != news.none_label));
    }

    fn vocab() -> Vec<&'static str> {
        vec![
            "the",
            "economy",
            "inflation",
            "prices",
            "and",
            "crime",
            "i",
            "think",
            "really",
            "is",
            "jobs",
            "guns",
            "school",
            "weather",
            "my",
            "dog",
            "border",
            "very",
            "bad",
            "good",
        ]
    }

    proptest! {
        #[test]
        fn appending_keywords_never_flips_none_to_relevance(
            words in proptest::collection::vec(proptest::sample::select(vocab()), 0..30),
            extra in proptest::collection::vec(
                proptest::sample::select(vec!["economy", "inflation", "crime", "immigration", "taxes"]),
                1..5,
            ),
        ) {
            let q = builtin_study();
            let agent = ReferenceBackend::default();
            let allowed: BTreeSet<_> = [ProbeKind::Elaboration, ProbeKind::Relevance].into();
            let seed = words.join(" ");
            let before = agent.decide_probe(ctx(&q, "Q1", T2), &seed, &allowed).unwrap();
            let after_text = format!("{seed} {}", extra.join(" "));
            let after = agent.decide_probe(ctx(&q, "Q1", T2), &after_text, &allowed).unwrap();
            if before.kind == ProbeDecisionKind::None {
                prop_assert_ne!(after.kind, ProbeDecisionKind::Relevance);
            }
            prop_assert_ne!(after.kind, ProbeDecisionKind::Hybrid);
        }

        #[test]
        fn coding_is_deterministic_and_scores_bounded(
            words in proptest::collection::vec(proptest::sample::select(vocab()), 0..20),
        ) {
            let q = builtin_study();
            let agent = ReferenceBackend::default();
            let text = words.join(" ");
            let a = agent.code_response(ctx(&q, "Q1", T1), &text).unwrap();
            let b = agent.code_response(ctx(&q, "Q1", T1), &text).unwrap();
            prop_assert_eq!(&a, &b);
            for d in &a.detected {
                prop_assert!(d.score > 0.0 && d.score <= 1.0);
            }
        }
    }
}
