#![allow(dead_code)]

use std::path::PathBuf;

use convoprobe::engine::{Affordance, BotPrompt};
use convoprobe::transcript::TurnKind;
use convoprobe::*;

pub const T0: Timestamp = Timestamp(1_720_000_000_000);

/// Fixed answers for a scripted respondent. Denies the Q4 confirmation so
/// the categorical fallback is exercised.
pub fn scripted_input(prompt: &BotPrompt) -> RespondentInput {
    let q = prompt.question_id.as_str();
    match (&prompt.affordance, prompt.kind) {
        (Affordance::YesNo, TurnKind::ConfirmBinary) => RespondentInput::YesNo { value: q != "Q4" },
        (Affordance::YesNo, _) => RespondentInput::YesNo { value: true },
        (Affordance::ChoiceList { .. }, TurnKind::ConfirmCategorical) => RespondentInput::Choice { index: 0 },
        (Affordance::ChoiceList { options }, _) => RespondentInput::Choice { index: options.len() / 2 },
        (Affordance::Likert { .. }, _) => RespondentInput::Likert { value: 2 },
        (Affordance::FreeText, kind) if kind.is_probe() => {
            RespondentInput::text("prices for groceries and rent keep going up every single month")
        }
        (Affordance::FreeText, _) => RespondentInput::text(match q {
            "Q1" => "Inflation.",
            "Q2" => "Pretty bad honestly",
            "Q3" => "Jobs are hard to find and wages are low",
            "Q4" => "CNN",
            "Q5" => "42",
            "Q9" => "I teach at a high school",
            _ => "no comment",
        }),
    }
}

/// Drive one session to completion with the scripted respondent, one
/// respondent turn every 30 seconds.
pub fn run_scripted(q: &Questionnaire, condition: Condition, seed: u64) -> Session {
    let agent = ReferenceBackend::default();
    let (mut s, _) = start_session(q, condition, "scripted", seed, T0).unwrap();
    let mut now = T0;
    while let Some(prompt) = s.pending_prompt.clone() {
        now = now.plus_millis(30_000);
        advance(&mut s, q, scripted_input(&prompt), &agent, now).unwrap();
    }
    s
}

/// The session's records as store lines.
pub fn session_jsonl(s: &Session) -> String {
    s.pending_records().iter().map(|r| convoprobe::store::encode_line(r).unwrap() + "\n").collect()
}

pub fn golden_path(condition: Condition) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{condition}.jsonl"))
}

/// Compare against the checked-in golden file; `CONVOPROBE_BLESS=1`
/// rewrites it instead.
pub fn check_golden(condition: Condition, actual: &str) -> Result<(), String> {
    let path = golden_path(condition);
    if std::env::var_os("CONVOPROBE_BLESS").is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        let line = expected.lines().zip(actual.lines()).position(|(a, b)| a != b).unwrap_or(0);
        Err(format!("{} differs at line {}", path.display(), line + 1))
    }
}
