//! C ABI for the convoprobe interviewing engine.
//!
//! Structured values cross the boundary as UTF-8 JSON strings. Every call
//! returns a [`ConvoprobeStatus`]; on failure the detail is available from
//! [`convoprobe_last_error_message`] on the same thread. Strings handed out
//! through `out_*` pointers belong to the caller and must be released with
//! [`convoprobe_string_free`]. Handles are released with their own `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use serde::Deserialize;

use convoprobe::engine::{EngineError, EngineStep};
use convoprobe::metrics::report::{build_report, ReportInputs};
use convoprobe::questionnaire::builtin_study_json;
use convoprobe::simulate::{run_experiment, ExperimentConfig};
use convoprobe::store::{decode_all, encode_line};
use convoprobe::{
    advance, builtin_study, expire_session, parse_questionnaire, start_session, Condition, Questionnaire,
    ReferenceBackend, RespondentInput, Session, Timestamp, Transcript, TranscriptRecord,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvoprobeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidArgument = 4,
    InvalidQuestionnaire = 5,
    SessionNotActive = 6,
    AffordanceMismatch = 7,
    Engine = 8,
    Internal = 99,
}

/// A loaded questionnaire plus the reference agent.
pub struct ConvoprobeEngine {
    questionnaire: Questionnaire,
    agent: ReferenceBackend,
}

/// One live interview.
pub struct ConvoprobeSession {
    session: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ConvoprobeStatus, String);

impl Failure {
    fn new(status: ConvoprobeStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match e {
            EngineError::SessionNotActive => ConvoprobeStatus::SessionNotActive,
            EngineError::AffordanceMismatch(_) => ConvoprobeStatus::AffordanceMismatch,
            _ => ConvoprobeStatus::Engine,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ConvoprobeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            ConvoprobeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal error: {msg}"));
            ConvoprobeStatus::Internal
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(ConvoprobeStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(ConvoprobeStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn parse_json<'a, T: Deserialize<'a>>(text: &'a str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::new(ConvoprobeStatus::InvalidJson, format!("{what}: {e}")))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure::new(ConvoprobeStatus::Internal, "output contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn write_json(out: *mut *mut c_char, value: &impl serde::Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string(value).map_err(|e| Failure::new(ConvoprobeStatus::Internal, e.to_string()))?;
    write_string(out, s)
}

fn check_out<T>(out: *mut T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure::new(ConvoprobeStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn engine_ref<'a>(engine: *const ConvoprobeEngine) -> Result<&'a ConvoprobeEngine, Failure> {
    engine.as_ref().ok_or_else(|| Failure::new(ConvoprobeStatus::NullPointer, "engine is null"))
}

unsafe fn session_mut<'a>(session: *mut ConvoprobeSession) -> Result<&'a mut ConvoprobeSession, Failure> {
    session.as_mut().ok_or_else(|| Failure::new(ConvoprobeStatus::NullPointer, "session is null"))
}

fn records_jsonl(records: &[TranscriptRecord]) -> Result<String, Failure> {
    let mut out = String::new();
    for r in records {
        out += &encode_line(r).map_err(|e| Failure::new(ConvoprobeStatus::Internal, e.to_string()))?;
        out.push('\n');
    }
    Ok(out)
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn convoprobe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failed call on this thread, or NULL after a
/// successful one. The pointer stays valid until the next convoprobe call
/// on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn convoprobe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Free a string returned through an `out_*` parameter. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The built-in study document as JSON.
///
/// # Safety
/// `out_json` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_builtin_questionnaire(out_json: *mut *mut c_char) -> ConvoprobeStatus {
    guard(|| {
        check_out(out_json, "out_json")?;
        write_string(out_json, builtin_study_json().to_string())
    })
}

/// Load a questionnaire document, or the built-in study when
/// `questionnaire_json` is NULL.
///
/// # Safety
/// `questionnaire_json` must be NULL or a NUL-terminated string; `out_engine`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_engine_new(
    questionnaire_json: *const c_char,
    out_engine: *mut *mut ConvoprobeEngine,
) -> ConvoprobeStatus {
    guard(|| {
        check_out(out_engine, "out_engine")?;
        let questionnaire = if questionnaire_json.is_null() {
            builtin_study()
        } else {
            let text = read_str(questionnaire_json, "questionnaire_json")?;
            parse_questionnaire(text)
                .map_err(|e| Failure::new(ConvoprobeStatus::InvalidQuestionnaire, e.to_string()))?
        };
        let engine = ConvoprobeEngine { questionnaire, agent: ReferenceBackend::default() };
        *out_engine = Box::into_raw(Box::new(engine));
        Ok(())
    })
}

/// # Safety
/// `engine` must be NULL or a handle from [`convoprobe_engine_new`] that
/// has not been freed. Sessions do not borrow the engine.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_engine_free(engine: *mut ConvoprobeEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRequest {
    condition: Condition,
    respondent_id: String,
    #[serde(default)]
    seed: u64,
    /// Wall clock when omitted.
    now_ms: Option<i64>,
}

/// Open a session at the consent screener. `request_json` is
/// `{"condition": "t2", "respondent_id": "r1", "seed": 7, "now_ms": 0}`;
/// `seed` and `now_ms` are optional. The first step is written to
/// `out_step_json`.
///
/// # Safety
/// Pointers must be valid; `request_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_session_start(
    engine: *const ConvoprobeEngine,
    request_json: *const c_char,
    out_session: *mut *mut ConvoprobeSession,
    out_step_json: *mut *mut c_char,
) -> ConvoprobeStatus {
    guard(|| {
        let engine = engine_ref(engine)?;
        check_out(out_session, "out_session")?;
        check_out(out_step_json, "out_step_json")?;
        let req: StartRequest = parse_json(read_str(request_json, "request_json")?, "request_json")?;
        let now = req.now_ms.map_or_else(Timestamp::now, Timestamp);
        let (session, step) = start_session(&engine.questionnaire, req.condition, &req.respondent_id, req.seed, now)?;
        write_json(out_step_json, &step)?;
        *out_session = Box::into_raw(Box::new(ConvoprobeSession { session }));
        Ok(())
    })
}

/// Feed one respondent input, e.g. `{"type": "free_text", "text": "..."}`,
/// `{"type": "yes_no", "value": true}`, `{"type": "choice", "index": 0}` or
/// `{"type": "likert", "value": 3}`. A negative `now_ms` means wall clock.
///
/// # Safety
/// Pointers must be valid; `input_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_session_advance(
    engine: *const ConvoprobeEngine,
    session: *mut ConvoprobeSession,
    input_json: *const c_char,
    now_ms: i64,
    out_step_json: *mut *mut c_char,
) -> ConvoprobeStatus {
    guard(|| {
        let engine = engine_ref(engine)?;
        let handle = session_mut(session)?;
        check_out(out_step_json, "out_step_json")?;
        let input: RespondentInput = parse_json(read_str(input_json, "input_json")?, "input_json")?;
        let now = if now_ms < 0 { Timestamp::now() } else { Timestamp(now_ms) };
        let step: EngineStep = advance(&mut handle.session, &engine.questionnaire, input, &engine.agent, now)?;
        write_json(out_step_json, &step)
    })
}

/// Mark the session dropped out if it has been idle for more than
/// `timeout_secs` at `now_ms`. `out_expired` receives whether it changed.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_session_expire(
    session: *mut ConvoprobeSession,
    now_ms: i64,
    timeout_secs: u64,
    out_expired: *mut bool,
) -> ConvoprobeStatus {
    guard(|| {
        let handle = session_mut(session)?;
        check_out(out_expired, "out_expired")?;
        *out_expired = expire_session(&mut handle.session, Timestamp(now_ms), Duration::from_secs(timeout_secs));
        Ok(())
    })
}

/// The session's transcript so far as JSON.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_session_transcript(
    session: *mut ConvoprobeSession,
    out_json: *mut *mut c_char,
) -> ConvoprobeStatus {
    guard(|| {
        let handle = session_mut(session)?;
        check_out(out_json, "out_json")?;
        write_json(out_json, &handle.session.transcript())
    })
}

/// Store records produced since the last drain, as JSONL lines ready to
/// append to a transcript store.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_session_drain_records(
    session: *mut ConvoprobeSession,
    out_jsonl: *mut *mut c_char,
) -> ConvoprobeStatus {
    guard(|| {
        let handle = session_mut(session)?;
        check_out(out_jsonl, "out_jsonl")?;
        let records = handle.session.drain_records();
        write_string(out_jsonl, records_jsonl(&records)?)
    })
}

/// Serialize the full session state, RNG included, so it can be restored
/// elsewhere with [`convoprobe_session_restore`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_session_save(
    session: *mut ConvoprobeSession,
    out_json: *mut *mut c_char,
) -> ConvoprobeStatus {
    guard(|| {
        let handle = session_mut(session)?;
        check_out(out_json, "out_json")?;
        write_json(out_json, &handle.session)
    })
}

/// # Safety
/// Pointers must be valid; `state_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_session_restore(
    state_json: *const c_char,
    out_session: *mut *mut ConvoprobeSession,
) -> ConvoprobeStatus {
    guard(|| {
        check_out(out_session, "out_session")?;
        let session: Session = parse_json(read_str(state_json, "state_json")?, "state_json")?;
        *out_session = Box::into_raw(Box::new(ConvoprobeSession { session }));
        Ok(())
    })
}

/// # Safety
/// `session` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_session_free(session: *mut ConvoprobeSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Run a simulated experiment. `config_json` is
/// `{"seed": 1, "n_per_condition": 100}` plus optional `conditions`,
/// `population` and `timeout_secs`. Writes the store as JSONL.
///
/// # Safety
/// Pointers must be valid; `config_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_simulate(
    engine: *const ConvoprobeEngine,
    config_json: *const c_char,
    out_store_jsonl: *mut *mut c_char,
) -> ConvoprobeStatus {
    guard(|| {
        let engine = engine_ref(engine)?;
        check_out(out_store_jsonl, "out_store_jsonl")?;
        let config: ExperimentConfig = parse_json(read_str(config_json, "config_json")?, "config_json")?;
        let run = run_experiment(&engine.questionnaire, &config, &engine.agent)
            .map_err(|e| Failure::new(ConvoprobeStatus::InvalidArgument, e.to_string()))?;
        write_string(out_store_jsonl, records_jsonl(&run.records)?)
    })
}

/// Metric report for a JSONL store as JSON. Corrupt lines are skipped,
/// as when reading a store file.
///
/// # Safety
/// Pointers must be valid; `store_jsonl` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn convoprobe_report(
    engine: *const ConvoprobeEngine,
    store_jsonl: *const c_char,
    out_json: *mut *mut c_char,
) -> ConvoprobeStatus {
    guard(|| {
        let engine = engine_ref(engine)?;
        check_out(out_json, "out_json")?;
        let loaded = decode_all(read_str(store_jsonl, "store_jsonl")?);
        let transcripts = Transcript::from_records(&loaded.records);
        let inputs = ReportInputs { coder_labels: None, quality_labels: None };
        let report = build_report(&engine.questionnaire, &transcripts, &inputs)
            .map_err(|e| Failure::new(ConvoprobeStatus::InvalidArgument, e.to_string()))?;
        write_string(out_json, report.to_json())
    })
}
