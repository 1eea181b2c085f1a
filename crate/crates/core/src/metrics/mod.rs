//! Outcome measures computed from transcripts and human labels.

pub mod attrition;
pub mod coding;
pub mod duration;
pub mod informational;
pub mod quality;
pub mod report;
pub mod text;

use thiserror::Error;

pub use attrition::{attrition, completion_counts, AttritionCell, CompletionCounts};
pub use coding::{
    coding_performance, coding_records, confusion_matrix, majority_labels, read_coder_votes, write_coder_votes,
    CodeLabel, CoderVote, CodingRecord, ConfusionMatrix, Prf, Ratio, ResponseKey, Truth,
};
pub use duration::{duration_summary, DurationSummary};
pub use informational::{informational_measures, segment_text, TextMeasures};
pub use quality::{ingest_quality_labels, quality_rates, Criterion, QualityLabels, QualityRate, Segment};
pub use report::{build_report, MetricReport, ReportInputs};
pub use text::{
    combine_segments, kl_divergence, lexical_diversity, shannon_entropy, tokenize, CorpusDistribution, TokenizedText,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("token `{0}` is not in the corpus")]
    OutOfCorpusToken(String),
    #[error("no majority coder label for {0}")]
    MissingLabels(String),
    #[error("label file: {0}")]
    Schema(String),
    #[error("conflicting duplicate label row for {0}")]
    ConflictingDuplicateRow(String),
}
