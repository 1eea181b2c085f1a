use proptest::prelude::*;

use convoprobe::metrics::report::{build_report, ReportInputs};
use convoprobe::metrics::{
    completion_counts, kl_divergence, lexical_diversity, shannon_entropy, tokenize, CorpusDistribution,
};
use convoprobe::simulate::{run_experiment, ExperimentConfig};
use convoprobe::{builtin_study, Condition, ReferenceBackend};

const VOCAB: [&str; 8] = ["jobs", "prices", "rent", "crime", "the", "economy", "taxes", "war"];

fn text_strategy() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(VOCAB.to_vec()), 1..25).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn measures_stay_in_range(text in text_strategy()) {
        let t = tokenize(&text);
        let d = lexical_diversity(&text).unwrap();
        prop_assert!(d > 0.0 && d <= 1.0);
        let h = shannon_entropy(&text).unwrap();
        prop_assert!(h >= 0.0 && h <= (t.unique() as f64).ln() + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(texts in proptest::collection::vec(text_strategy(), 1..10)) {
        let corpus = CorpusDistribution::from_texts("Q1", texts.iter().map(String::as_str));
        for t in &texts {
            prop_assert!(kl_divergence(t, &corpus).unwrap() >= -1e-12);
        }
        let whole = texts.join(" ");
        prop_assert!(kl_divergence(&whole, &corpus).unwrap().abs() < 1e-12);
    }
}

#[test]
fn report_covers_every_condition_of_a_simulated_run() {
    let q = builtin_study();
    let run = run_experiment(&q, &ExperimentConfig::new(11, 30), &ReferenceBackend::default()).unwrap();
    let counts = completion_counts(&run.transcripts);
    for c in [Condition::Control, Condition::ConfirmationProbes, Condition::ElabRelevanceProbes] {
        let n = &counts[&c];
        assert_eq!(n.started(), 30, "{c}: {n:?}");
        assert_eq!(n.active, 0);
    }
    let report =
        build_report(&q, &run.transcripts, &ReportInputs { coder_labels: None, quality_labels: None }).unwrap();
    let text = report.render_text();
    for c in ["control", "t1", "t2"] {
        assert!(text.contains(c), "report text lacks {c}");
    }
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert!(json.is_object());
    let csv = report.render_csv().unwrap();
    assert!(csv.starts_with("# "));
}
