//! Assembles every outcome measure into one report, rendered as JSON, CSV
//! sections or aligned plain-text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::attrition::{attrition, completion_counts, AttritionCell, CompletionCounts};
use super::coding::{coding_performance, coding_records, restrict_to_labeled, CodeLabel, Prf, ResponseKey, Truth};
use super::duration::{duration_summary, DurationSummary};
use super::informational::{informational_measures, TextMeasures};
use super::quality::{quality_rates, QualityLabels, QualityRate};
use super::MetricError;
use crate::agent::ProbeDecisionKind;
use crate::questionnaire::{Concept, Condition, Format, Questionnaire};
use crate::transcript::{Speaker, Transcript, TurnKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingRow {
    pub question_id: String,
    pub condition: Condition,
    pub truth: Truth,
    pub prf: Prf,
}

/// Probe decisions per question, as in a probe-trigger table.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProbeMixRow {
    pub question_id: String,
    pub elaboration: usize,
    pub relevance: usize,
    pub hybrid: usize,
    pub none: usize,
    /// Agent failures recorded as system turns.
    pub errors: usize,
}

impl ProbeMixRow {
    pub fn total(&self) -> usize {
        self.elaboration + self.relevance + self.hybrid + self.none + self.errors
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertRow {
    pub question_id: String,
    pub condition: Condition,
    pub n: usize,
    /// Mean of (value - min) / (max - min).
    pub mean_normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub questionnaire_id: String,
    pub sessions: usize,
    pub completion: BTreeMap<Condition, CompletionCounts>,
    pub attrition: Vec<AttritionCell>,
    pub duration_all: Vec<DurationSummary>,
    pub duration_completes: Vec<DurationSummary>,
    pub coding: Vec<CodingRow>,
    pub probe_mix: Vec<ProbeMixRow>,
    pub informational: Vec<TextMeasures>,
    pub experience: Vec<LikertRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<Vec<QualityRate>>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs<'a> {
    pub coder_labels: Option<&'a BTreeMap<ResponseKey, CodeLabel>>,
    pub quality_labels: Option<&'a [QualityLabels]>,
}

pub const AGENT_FAILURE_PREFIX: &str = "agent failure";

pub fn probe_mix(transcripts: &[Transcript], condition: Condition) -> Vec<ProbeMixRow> {
    let mut rows: BTreeMap<String, ProbeMixRow> = BTreeMap::new();
    for t in transcripts.iter().filter(|t| t.condition == condition) {
        for p in &t.probes {
            let row = rows.entry(p.question_id.clone()).or_default();
            match p.decision.kind {
                ProbeDecisionKind::Elaboration => row.elaboration += 1,
                ProbeDecisionKind::Relevance => row.relevance += 1,
                ProbeDecisionKind::Hybrid => row.hybrid += 1,
                ProbeDecisionKind::None => row.none += 1,
            }
        }
        for turn in &t.turns {
            if turn.kind == TurnKind::System && turn.text.starts_with(AGENT_FAILURE_PREFIX) {
                rows.entry(turn.question_id.clone()).or_default().errors += 1;
            }
        }
    }
    rows.into_iter()
        .map(|(q, mut r)| {
            r.question_id = q;
            r
        })
        .collect()
}

pub fn likert_means(q: &Questionnaire, transcripts: &[Transcript]) -> Vec<LikertRow> {
    let mut out = Vec::new();
    for spec in q.questions.iter().filter(|s| s.concept == Concept::Experience) {
        for c in &q.conditions {
            let Format::ClosedSingleChoice { options, .. } = spec.format(*c) else {
                continue;
            };
            if options.len() < 2 {
                continue;
            }
            let span = (options.len() - 1) as f64;
            let values: Vec<f64> = transcripts
                .iter()
                .filter(|t| t.condition == *c)
                .filter_map(|t| {
                    let answer = t
                        .exchange(&spec.id)
                        .into_iter()
                        .find(|x| x.speaker == Speaker::Respondent && x.kind == TurnKind::Answer)?;
                    options.iter().position(|o| *o == answer.text).map(|i| i as f64 / span)
                })
                .collect();
            out.push(LikertRow {
                question_id: spec.id.clone(),
                condition: *c,
                n: values.len(),
                mean_normalized: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
            });
        }
    }
    out
}

pub fn build_report(
    q: &Questionnaire,
    transcripts: &[Transcript],
    inputs: &ReportInputs<'_>,
) -> Result<MetricReport, MetricError> {
    let records = coding_records(transcripts);
    let conditions: BTreeMap<&str, Condition> =
        transcripts.iter().map(|t| (t.session_id.as_str(), t.condition)).collect();
    let mut coding = Vec::new();
    for spec in &q.questions {
        for c in &q.conditions {
            let recs: Vec<_> = records
                .iter()
                .filter(|r| r.key.question_id == spec.id && conditions.get(r.key.session_id.as_str()) == Some(c))
                .cloned()
                .collect();
            if recs.is_empty() {
                continue;
            }
            let prf = coding_performance(&recs, Truth::RespondentConfirmation, None)?;
            coding.push(CodingRow {
                question_id: spec.id.clone(),
                condition: *c,
                truth: Truth::RespondentConfirmation,
                prf,
            });
            if let Some(labels) = inputs.coder_labels {
                let labeled = restrict_to_labeled(&recs, labels);
                if !labeled.is_empty() {
                    let prf = coding_performance(&labeled, Truth::CoderLabels, Some(labels))?;
                    coding.push(CodingRow {
                        question_id: spec.id.clone(),
                        condition: *c,
                        truth: Truth::CoderLabels,
                        prf,
                    });
                }
            }
        }
    }
    let quality = inputs.quality_labels.map(|labels| {
        let owned: BTreeMap<String, Condition> = conditions.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        quality_rates(labels, &owned, q)
    });
    Ok(MetricReport {
        questionnaire_id: q.id.clone(),
        sessions: transcripts.len(),
        completion: completion_counts(transcripts),
        attrition: attrition(q, transcripts),
        duration_all: duration_summary(transcripts, true),
        duration_completes: duration_summary(transcripts, false),
        coding,
        probe_mix: probe_mix(transcripts, Condition::ElabRelevanceProbes),
        informational: informational_measures(q, transcripts),
        experience: likert_means(q, transcripts),
        quality,
    })
}

fn f(x: Option<f64>, digits: usize) -> String {
    match x {
        Some(v) => format!("{v:.digits$}"),
        None => "NA".to_string(),
    }
}

fn pct(r: &super::coding::Ratio) -> String {
    match r.value() {
        Some(v) => format!("{:.1}% ({}/{})", v * 100.0, r.numerator, r.denominator),
        None => format!("NA (0/{})", r.denominator),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(title: &str, header: &[&'static str], rows: Vec<Vec<String>>) -> Self {
        Self { title: title.to_string(), header: header.to_vec(), rows }
    }
}

/// Aligned text table: first column left-aligned, the rest right-aligned.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, cell) in r.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = widths[0]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = widths[i]);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.clone()));
        out.push('\n');
    }
    out
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Every table in display order.
    pub fn tables(&self) -> Vec<Table> {
        let mut out = Vec::new();

        let rows: Vec<Vec<String>> = self
            .completion
            .iter()
            .map(|(c, n)| {
                vec![
                    c.to_string(),
                    n.completes.to_string(),
                    n.dropouts.to_string(),
                    n.declined.to_string(),
                    f(n.dropout_rate(), 3),
                ]
            })
            .collect();
        out.push(Table::new(
            "Completions by condition",
            &["condition", "completes", "dropouts", "declined", "dropout_rate"],
            rows,
        ));

        for (title, summary) in [
            ("Interview duration, minutes (completes and dropouts)", &self.duration_all),
            ("Interview duration, minutes (completes only)", &self.duration_completes),
        ] {
            let rows: Vec<Vec<String>> = summary
                .iter()
                .map(|d| {
                    let mut r = vec![d.condition.to_string(), d.n.to_string()];
                    match d.percentiles {
                        Some(p) => r.extend(p.iter().map(|v| format!("{v:.2}"))),
                        None => r.extend(std::iter::repeat_n("NA".to_string(), 5)),
                    }
                    r.push(f(d.mean, 2));
                    r
                })
                .collect();
            out.push(Table::new(title, &["condition", "n", "p1", "p25", "p50", "p75", "p99", "mean"], rows));
        }

        let rows: Vec<Vec<String>> = self
            .attrition
            .iter()
            .filter(|a| a.exposed > 0)
            .map(|a| {
                vec![
                    a.question_id.clone(),
                    a.condition.to_string(),
                    a.exposed.to_string(),
                    f(a.immediate_rate(), 4),
                    f(a.anytime_rate(), 4),
                ]
            })
            .collect();
        out.push(Table::new(
            "Attrition by question (immediate / any time after)",
            &["question", "condition", "exposed", "immediate", "anytime"],
            rows,
        ));

        if !self.coding.is_empty() {
            let rows: Vec<Vec<String>> = self
                .coding
                .iter()
                .map(|r| {
                    let truth = match r.truth {
                        Truth::RespondentConfirmation => "respondent",
                        Truth::CoderLabels => "coders",
                    };
                    vec![
                        r.question_id.clone(),
                        r.condition.to_string(),
                        truth.to_string(),
                        pct(&r.prf.accuracy),
                        pct(&r.prf.precision),
                        pct(&r.prf.recall),
                    ]
                })
                .collect();
            out.push(Table::new(
                "Active coding performance",
                &["question", "condition", "truth", "accuracy", "precision", "recall"],
                rows,
            ));
        }

        if !self.probe_mix.is_empty() {
            let rows: Vec<Vec<String>> = self
                .probe_mix
                .iter()
                .map(|p| {
                    let share = |n: usize| format!("{n} ({:.1}%)", 100.0 * n as f64 / p.total().max(1) as f64);
                    vec![
                        p.question_id.clone(),
                        share(p.elaboration),
                        share(p.relevance),
                        share(p.hybrid),
                        share(p.none),
                        share(p.errors),
                    ]
                })
                .collect();
            out.push(Table::new(
                "Probes triggered (t2)",
                &["question", "elaboration", "relevance", "hybrid", "none", "error"],
                rows,
            ));
        }

        let rows: Vec<Vec<String>> = self
            .informational
            .iter()
            .filter(|m| m.n + m.excluded > 0)
            .map(|m| {
                vec![
                    m.question_id.clone(),
                    m.condition.to_string(),
                    m.segment.as_str().to_string(),
                    m.n.to_string(),
                    m.excluded.to_string(),
                    f(m.mean_words, 2),
                    f(m.mean_lexical_diversity, 4),
                    f(m.mean_entropy, 4),
                    f(m.mean_kl, 4),
                ]
            })
            .collect();
        out.push(Table::new(
            "Informational measures (open-ended answers)",
            &["question", "condition", "segment", "n", "empty", "words", "diversity", "entropy", "kl"],
            rows,
        ));

        let rows: Vec<Vec<String>> = self
            .experience
            .iter()
            .map(|l| vec![l.question_id.clone(), l.condition.to_string(), l.n.to_string(), f(l.mean_normalized, 4)])
            .collect();
        out.push(Table::new("Experience items (normalized 0-1)", &["question", "condition", "n", "mean"], rows));

        if let Some(quality) = &self.quality {
            let rows: Vec<Vec<String>> = quality
                .iter()
                .filter(|r| r.n > 0)
                .map(|r| {
                    vec![
                        r.criterion.as_str().to_string(),
                        r.condition.to_string(),
                        r.segment.as_str().to_string(),
                        r.n.to_string(),
                        f(r.rate(), 4),
                    ]
                })
                .collect();
            out.push(Table::new(
                "Human-coded quality rates",
                &["criterion", "condition", "segment", "n", "rate"],
                rows,
            ));
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("Questionnaire {}: {} sessions\n", self.questionnaire_id, self.sessions);
        for t in self.tables() {
            let _ = write!(out, "\n{}\n{}", t.title, render_table(&t.header, &t.rows));
        }
        out
    }

    /// One CSV section per table, each headed by a `# title` line.
    pub fn render_csv(&self) -> Result<String, MetricError> {
        let mut out = String::new();
        for (i, t) in self.tables().into_iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "# {}", t.title);
            let mut w = csv::Writer::from_writer(Vec::new());
            let schema = |e: csv::Error| MetricError::Schema(e.to_string());
            w.write_record(&t.header).map_err(schema)?;
            for r in &t.rows {
                w.write_record(r).map_err(schema)?;
            }
            let bytes = w.into_inner().map_err(|e| MetricError::Schema(e.to_string()))?;
            out.push_str(&String::from_utf8(bytes).expect("csv of utf-8 cells"));
        }
        Ok(out)
    }
}
