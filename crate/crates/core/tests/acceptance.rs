//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use convoprobe::agent::{Coding, ConfirmationOutcome, DetectedCategory};
use convoprobe::metrics::report::{build_report, ReportInputs};
use convoprobe::metrics::{
    coding_performance, coding_records, completion_counts, confusion_matrix, duration_summary, kl_divergence,
    lexical_diversity, majority_labels, shannon_entropy, CodeLabel, CodingRecord, CorpusDistribution, ResponseKey,
    Truth,
};
use convoprobe::simulate::{run_experiment, Dist, ExperimentConfig, ExperimentRun, ProbeResponse};
use convoprobe::stats::{bh_adjust, session_dataset, treatment_effect, EffectSpec};
use convoprobe::store::{read_path, Durability, Store};
use convoprobe::transcript::{Speaker, TurnKind};
use convoprobe::*;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: impl Into<String>) -> Check {
    Check { name, pass, detail: detail.into() }
}

const VOCAB: [&str; 8] = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"];

/// Random counts over a vocabulary of at most 8 words, each count at most 5,
/// rendered as shuffled text with random capitalization and punctuation.
fn random_counts(rng: &mut impl Rng, vocab: usize, allow_empty: bool) -> Vec<usize> {
    loop {
        let counts: Vec<usize> = (0..vocab).map(|_| rng.random_range(0..=5)).collect();
        if allow_empty || counts.iter().any(|&c| c > 0) {
            return counts;
        }
    }
}

fn render(counts: &[usize], rng: &mut impl Rng) -> String {
    let mut words: Vec<String> = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            let mut w = VOCAB[i].to_string();
            if rng.random_bool(0.3) {
                w = w.to_uppercase();
            }
            if rng.random_bool(0.3) {
                w.push(*[',', '.', '!', '?'].choose(rng).unwrap());
            }
            words.push(w);
        }
    }
    words.shuffle(rng);
    words.join(" ")
}

fn oracle_diversity(c: &[usize]) -> f64 {
    c.iter().filter(|&&x| x > 0).count() as f64 / c.iter().sum::<usize>() as f64
}

fn oracle_entropy(c: &[usize]) -> f64 {
    let n = c.iter().sum::<usize>() as f64;
    let mut h = 0.0;
    for &x in c.iter().filter(|&&x| x > 0) {
        let p = x as f64 / n;
        h -= p * p.ln();
    }
    h
}

fn oracle_kl(response: &[usize], corpus: &[usize]) -> f64 {
    let n = response.iter().sum::<usize>() as f64;
    let m = corpus.iter().sum::<usize>() as f64;
    let mut kl = 0.0;
    for (&r, &c) in response.iter().zip(corpus) {
        if r > 0 {
            let p = r as f64 / n;
            let q = c as f64 / m;
            kl += p * (p / q).ln();
        }
    }
    kl
}

struct KlCase {
    value: f64,
    equality: bool,
}

fn text_metrics() -> (Check, Vec<KlCase>) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    let mut worst: f64 = 0.0;
    let mut cases = Vec::new();
    for i in 0..1000 {
        let vocab = rng.random_range(1..=VOCAB.len());
        let counts = random_counts(&mut rng, vocab, false);
        let text = render(&counts, &mut rng);
        worst = worst.max((lexical_diversity(&text).unwrap() - oracle_diversity(&counts)).abs());
        worst = worst.max((shannon_entropy(&text).unwrap() - oracle_entropy(&counts)).abs());

        // Every tenth corpus is a multiple of the response, so p = q.
        let equality = i % 10 == 0;
        let extra: Vec<usize> = if equality {
            let k = rng.random_range(0..=3);
            counts.iter().map(|c| c * k).collect()
        } else {
            random_counts(&mut rng, vocab, true)
        };
        let corpus_counts: Vec<usize> = counts.iter().zip(&extra).map(|(a, b)| a + b).collect();
        let extra_text = render(&extra, &mut rng);
        let corpus = CorpusDistribution::from_texts("Q1", [text.as_str(), extra_text.as_str()]);
        let kl = kl_divergence(&text, &corpus).unwrap();
        worst = worst.max((kl - oracle_kl(&counts, &corpus_counts)).abs());
        cases.push(KlCase { value: kl, equality });
    }

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let corpus = |texts: &[&str]| CorpusDistribution::from_texts("Q1", texts.iter().copied());
    let examples = [
        close(lexical_diversity("jobs and the economy and inflation").unwrap(), 5.0 / 6.0),
        close(lexical_diversity("economy").unwrap(), 1.0),
        close(lexical_diversity("bad bad bad").unwrap(), 1.0 / 3.0),
        close(shannon_entropy("good good bad bad").unwrap(), 2f64.ln()),
        close(shannon_entropy("economy").unwrap(), 0.0),
        close(shannon_entropy("a b c d").unwrap(), 4f64.ln()),
        close(kl_divergence("economy and jobs", &corpus(&["economy and jobs"])).unwrap(), 0.0),
        close(
            kl_divergence("a a b", &corpus(&["a a a b b b"])).unwrap(),
            2.0 / 3.0 * (4.0f64 / 3.0).ln() + 1.0 / 3.0 * (2.0f64 / 3.0).ln(),
        ),
        close(kl_divergence("a", &corpus(&["a b"])).unwrap(), 2f64.ln()),
    ];
    let elapsed = start.elapsed();
    let hand_ok = examples.iter().all(|&b| b);
    let pass = worst <= 1e-9 && hand_ok && elapsed < Duration::from_secs(5);
    let detail = format!(
        "max |delta| {worst:.2e} over 1000 texts, {}/9 hand examples, {:.2}s",
        examples.iter().filter(|&&b| b).count(),
        elapsed.as_secs_f64()
    );
    (check("metric-oracle equivalence", pass, detail), cases)
}

fn kl_nonnegative(cases: &[KlCase]) -> Check {
    let negatives = cases.iter().filter(|c| c.value < 0.0).count();
    let eq: Vec<&KlCase> = cases.iter().filter(|c| c.equality).collect();
    let eq_worst = eq.iter().map(|c| c.value.abs()).fold(0.0, f64::max);
    let pass = negatives == 0 && eq_worst <= 1e-12;
    check(
        "KL nonnegativity",
        pass,
        format!("{negatives} negative of {}, {} equality cases max |KL| {eq_worst:.1e}", cases.len(), eq.len()),
    )
}

/// Textbook step-up procedure written from scratch.
fn bh_oracle(p: &[f64], q: f64) -> (Vec<f64>, Vec<bool>) {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut k = 0;
    for (rank, &i) in idx.iter().enumerate() {
        if p[i] <= (rank + 1) as f64 * q / m as f64 {
            k = rank + 1;
        }
    }
    let mut adjusted = vec![0.0; m];
    for (rank, &i) in idx.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (r2, &j) in idx.iter().enumerate().skip(rank) {
            best = best.min(p[j] * m as f64 / (r2 + 1) as f64);
        }
        adjusted[i] = best.min(1.0);
    }
    let mut rejected = vec![false; m];
    for &i in &idx[..k] {
        rejected[i] = true;
    }
    (adjusted, rejected)
}

fn bh() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb4);
    let mut worst: f64 = 0.0;
    let mut reject_mismatch = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=50);
        let ties = rng.random_bool(0.3);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                let x: f64 = if rng.random_bool(0.4) { rng.random_range(0.0..0.05) } else { rng.random() };
                if ties {
                    (x * 100.0).round() / 100.0
                } else {
                    x
                }
            })
            .collect();
        let got = bh_adjust(&p, 0.05).unwrap();
        let (adj, rej) = bh_oracle(&p, 0.05);
        for (a, b) in got.adjusted.iter().zip(&adj) {
            worst = worst.max((a - b).abs());
        }
        reject_mismatch += (got.rejected != rej) as usize;
    }
    let worked = bh_adjust(&[0.01, 0.02, 0.04, 0.5], 0.05).unwrap().adjusted;
    let expected = [0.04, 0.04, 0.16 / 3.0, 0.5];
    let worked_ok = worked.iter().zip(&expected).all(|(a, b)| (a - b).abs() <= 1e-15);
    let pass = worst <= 1e-12 && reject_mismatch == 0 && worked_ok;
    check(
        "BH correction",
        pass,
        format!(
            "max |delta| {worst:.1e} over 1000 vectors, {reject_mismatch} rejection mismatches, worked example {:.4?}",
            worked
        ),
    )
}

fn state_machine() -> Check {
    let q = builtin_study();
    let mut problems = Vec::new();
    for condition in Condition::ALL {
        let a = common::session_jsonl(&common::run_scripted(&q, condition, 2024));
        let b = common::session_jsonl(&common::run_scripted(&q, condition, 2024));
        if a != b {
            problems.push(format!("{condition} differs between runs"));
        }
        if let Err(e) = common::check_golden(condition, &a) {
            problems.push(e);
        }
    }
    // Structural properties over the scripted sessions and a simulated sample.
    let mut transcripts: Vec<Transcript> =
        Condition::ALL.iter().map(|&c| common::run_scripted(&q, c, 2024).transcript()).collect();
    let mut cfg = ExperimentConfig::new(99, 100);
    cfg.population.dropout_hazard = Dist::constant(0.0);
    transcripts.extend(run_experiment(&q, &cfg, &ReferenceBackend::default()).unwrap().transcripts);
    let mut control_probe_turns = 0;
    let mut excess = 0;
    for t in &transcripts {
        let mut per_question: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for turn in t.turns.iter().filter(|t| t.speaker == Speaker::Bot) {
            let e = per_question.entry(turn.question_id.as_str()).or_default();
            if turn.kind.is_probe() {
                e.0 += 1;
            }
            if turn.kind == TurnKind::ConfirmBinary {
                e.1 += 1;
            }
            if t.condition == Condition::Control && (turn.kind.is_probe() || turn.kind.is_confirmation()) {
                control_probe_turns += 1;
            }
        }
        excess += per_question.values().filter(|(p, c)| *p > 1 || *c > 1 || (*p > 0 && *c > 0)).count();
    }
    if control_probe_turns > 0 {
        problems.push(format!("{control_probe_turns} probe/confirmation turns in control"));
    }
    if excess > 0 {
        problems.push(format!("{excess} questions with more than one probe"));
    }
    let detail = if problems.is_empty() {
        format!("3 golden transcripts stable, {} transcripts checked for probe limits", transcripts.len())
    } else {
        problems.join("; ")
    };
    check("state-machine conformance", problems.is_empty(), detail)
}

fn fixture_record(id: &str, sampled: Option<&str>, outcome: ConfirmationOutcome) -> CodingRecord {
    let mut coding = Coding::empty("Q1");
    if let Some(s) = sampled {
        coding.detected.push(DetectedCategory { name: s.into(), score: 1.0 });
        coding.sampled_for_confirmation = Some(s.into());
        coding.binary_answer = Some(outcome == ConfirmationOutcome::ConfirmedYes);
    }
    coding.outcome = Some(outcome);
    CodingRecord { key: ResponseKey::new(id, "Q1"), coding }
}

fn coding_definitions() -> Check {
    use ConfirmationOutcome::*;
    let records = vec![
        fixture_record("r1", Some("Economy"), ConfirmedYes),
        fixture_record("r2", Some("Crime"), ConfirmedYes),
        fixture_record("r3", Some("Immigration"), ConfirmedYes),
        fixture_record("r4", Some("Economy"), Denied),
        fixture_record("r5", None, CategoricalSelection("Health Care".into())),
    ];
    let ratios = |p: &convoprobe::metrics::coding::Prf| {
        [p.accuracy, p.precision, p.recall].map(|r| (r.numerator, r.denominator))
    };
    let want = [(3, 5), (3, 4), (3, 4)];
    let resp = coding_performance(&records, Truth::RespondentConfirmation, None).unwrap();

    // Coder labels that agree with the respondents' own account.
    let label = |s: &str| CodeLabel::Category(s.into());
    let labels = BTreeMap::from([
        (ResponseKey::new("r1", "Q1"), label("Economy")),
        (ResponseKey::new("r2", "Q1"), label("Crime")),
        (ResponseKey::new("r3", "Q1"), label("Immigration")),
        (ResponseKey::new("r4", "Q1"), CodeLabel::NoneOfAbove),
        (ResponseKey::new("r5", "Q1"), label("Health Care")),
    ]);
    let coder = coding_performance(&records, Truth::CoderLabels, Some(&labels)).unwrap();
    let off = confusion_matrix(&records, &labels).unwrap().off_diagonal();
    let pass = ratios(&resp) == want && ratios(&coder) == want && off == 2;
    check(
        "coding-performance definitions",
        pass,
        format!("respondent truth {:?}, coder truth {:?}, off-diagonal {off}", ratios(&resp), ratios(&coder)),
    )
}

/// Respondent-confirmed minus ground-truth precision over T1 codings, with a
/// normal-approximation 95% CI from the per-record paired difference.
fn acquiescence_gap(run: &ExperimentRun) -> (f64, f64, f64) {
    let t1: Vec<Transcript> =
        run.transcripts.iter().filter(|t| t.condition == Condition::ConfirmationProbes).cloned().collect();
    let records = coding_records(&t1);
    let labels = majority_labels(&run.truth_votes());
    let resp = coding_performance(&records, Truth::RespondentConfirmation, None).unwrap();
    let coder = coding_performance(&records, Truth::CoderLabels, Some(&labels)).unwrap();
    let gap = resp.precision.value().unwrap() - coder.precision.value().unwrap();

    let diffs: Vec<f64> = records
        .iter()
        .filter(|r| r.coding.is_coded() && r.coding.outcome.is_some())
        .map(|r| {
            let yes = matches!(r.coding.outcome, Some(ConfirmationOutcome::ConfirmedYes)) as u8 as f64;
            let hit = matches!(labels.get(&r.key), Some(CodeLabel::Category(c)) if Some(c) == r.coding.sampled_for_confirmation.as_ref())
                as u8 as f64;
            yes - hit
        })
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    (gap, mean - half, mean + half)
}

fn acquiescence() -> Check {
    let start = Instant::now();
    let q = builtin_study();
    let agent = ReferenceBackend::default();
    let config = |seed: u64, a: f64, conditions: Vec<Condition>| {
        let mut cfg = ExperimentConfig::new(seed, 601);
        cfg.population.acquiescence = Dist::constant(a);
        cfg.conditions = conditions;
        cfg
    };
    let run = run_experiment(&q, &config(1, 0.3, Condition::ALL.to_vec()), &agent).unwrap();
    let (gap_03, _, _) = acquiescence_gap(&run);
    let run = run_experiment(&q, &config(1, 0.0, Condition::ALL.to_vec()), &agent).unwrap();
    let (gap_0, lo, hi) = acquiescence_gap(&run);

    let levels = [0.0, 0.15, 0.3, 0.6];
    let mut monotone = 0;
    let mut mean_gaps = [0.0; 4];
    for seed in 100..120 {
        let gaps: Vec<f64> = levels
            .iter()
            .map(|&a| {
                acquiescence_gap(
                    &run_experiment(&q, &config(seed, a, vec![Condition::ConfirmationProbes]), &agent).unwrap(),
                )
                .0
            })
            .collect();
        monotone += gaps.windows(2).all(|w| w[0] < w[1]) as usize;
        for (m, g) in mean_gaps.iter_mut().zip(&gaps) {
            *m += g / 20.0;
        }
    }
    let elapsed = start.elapsed();
    let pass = gap_03 >= 0.10 && lo <= 0.0 && 0.0 <= hi && monotone == 20 && elapsed < Duration::from_secs(120);
    check(
        "acquiescence signature",
        pass,
        format!(
            "gap {:.1}pp at a=0.3, {:.1}pp at a=0 (CI [{lo:.3}, {hi:.3}]), monotone in {monotone}/20 seeds, mean gaps {:.3?}, {:.1}s",
            gap_03 * 100.0,
            gap_0 * 100.0,
            mean_gaps,
            elapsed.as_secs_f64()
        ),
    )
}

fn attrition_duration() -> Check {
    let q = builtin_study();
    let agent = ReferenceBackend::default();
    let (mut drop_ok, mut dur_ok) = (0, 0);
    let mut last = String::new();
    for seed in 200..220 {
        let run = run_experiment(&q, &ExperimentConfig::new(seed, 601), &agent).unwrap();
        let counts = completion_counts(&run.transcripts);
        let d: Vec<usize> = Condition::ALL.iter().map(|c| counts[c].dropouts).collect();
        let m: Vec<f64> = duration_summary(&run.transcripts, true).iter().map(|s| s.mean.unwrap()).collect();
        drop_ok += (d[0] < d[1] && d[1] < d[2]) as usize;
        dur_ok += (m[0] < m[1] && m[1] < m[2]) as usize;
        last = format!("last seed dropouts {d:?}, mean minutes [{:.2}, {:.2}, {:.2}]", m[0], m[1], m[2]);
    }
    check(
        "attrition/duration shape",
        drop_ok >= 18 && dur_ok >= 18,
        format!("dropout order {drop_ok}/20, duration order {dur_ok}/20; {last}"),
    )
}

fn q1_effect(run: &ExperimentRun) -> convoprobe::stats::Effect {
    let q = builtin_study();
    let rows = session_dataset(&q, &run.transcripts);
    let spec = EffectSpec::new("q1_words_combined", Condition::ElabRelevanceProbes, Condition::Control);
    treatment_effect(&rows, &spec).unwrap()
}

fn calibration() -> Check {
    let q = builtin_study();
    let agent = ReferenceBackend::default();
    let arms = vec![Condition::Control, Condition::ElabRelevanceProbes];
    let mut covered = 0;
    for seed in 0..100 {
        let mut cfg = ExperimentConfig::new(10_000 + seed, 601);
        cfg.conditions = arms.clone();
        cfg.population.probe_response = ProbeResponse::Ignore;
        let e = q1_effect(&run_experiment(&q, &cfg, &agent).unwrap());
        covered += (e.ci_low <= 0.0 && 0.0 <= e.ci_high) as usize;
    }

    let mut cfg = ExperimentConfig::new(20_000, 601);
    cfg.conditions = arms;
    cfg.population.probe_response = ProbeResponse::FixedTokens { tokens: 5 };
    let run = run_experiment(&q, &cfg, &agent).unwrap();
    let e = q1_effect(&run);
    // Only probed respondents receive the extra tokens.
    let treated: Vec<&Transcript> = run
        .transcripts
        .iter()
        .filter(|t| t.condition == Condition::ElabRelevanceProbes && t.seed_answer("Q1").is_some())
        .collect();
    let probed = treated.iter().filter(|t| t.post_probe_answer("Q1").is_some()).count();
    let truth = 5.0 * probed as f64 / treated.len() as f64;
    let rel = (e.estimate - truth).abs() / truth;
    check(
        "estimation calibration",
        covered >= 93 && rel <= 0.15,
        format!(
            "null coverage {covered}/100; planted estimate {:.3} vs truth {truth:.3} ({:.1}% off)",
            e.estimate,
            rel * 100.0
        ),
    )
}

fn crash_replay() -> Check {
    let q = builtin_study();
    let mut cfg = ExperimentConfig::new(31, 20);
    cfg.population.dropout_hazard = Dist::constant(0.02);
    let run = run_experiment(&q, &cfg, &ReferenceBackend::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("run.jsonl");
    run.write_store(&Store::open(&full, Durability::Flush).unwrap()).unwrap();
    let bytes = std::fs::read(&full).unwrap();
    let boundaries: Vec<usize> =
        std::iter::once(0).chain(bytes.iter().enumerate().filter(|(_, b)| **b == b'\n').map(|(i, _)| i + 1)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    let inputs = ReportInputs { coder_labels: None, quality_labels: None };
    for _ in 0..50 {
        let k = rng.random_range(0..boundaries.len());
        let prefix = dir.path().join("prefix.jsonl");
        std::fs::write(&prefix, &bytes[..boundaries[k]]).unwrap();
        let loaded = match read_path(&prefix) {
            Ok(r) if r.corrupt.is_empty() && r.records.len() == k => r.records,
            _ => {
                failures += 1;
                continue;
            }
        };
        let reopened = Store::open(&prefix, Durability::Flush).and_then(|s| s.transcripts());
        let from_store = build_report(&q, &Transcript::from_records(&loaded), &inputs).unwrap().to_json();
        let direct = build_report(&q, &Transcript::from_records(&run.records[..k]), &inputs).unwrap().to_json();
        let reopened_ok = reopened.is_ok_and(|t| t == Transcript::from_records(&run.records[..k]));
        failures += (from_store != direct || !reopened_ok) as usize;
    }
    check(
        "crash-replay",
        failures == 0,
        format!("{} of 50 prefixes of a {}-record store reproduce their metrics", 50 - failures, run.records.len()),
    )
}

fn main() {
    let (metrics_check, kl_cases) = text_metrics();
    let checks = vec![
        metrics_check,
        kl_nonnegative(&kl_cases),
        bh(),
        state_machine(),
        coding_definitions(),
        acquiescence(),
        attrition_duration(),
        calibration(),
        crash_replay(),
    ];
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += !c.pass as usize;
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
