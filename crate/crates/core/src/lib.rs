//! Conversational survey interviewing: a questionnaire model, an interview
//! state machine with active coding and probing, transcript persistence,
//! data-quality metrics, estimation, a respondent simulator and an HTTP API.

pub mod agent;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod questionnaire;
pub mod server;
pub mod simulate;
pub mod stats;
pub mod store;
pub mod transcript;

pub use agent::{AgentBackend, ReferenceBackend};
pub use engine::{advance, expire_session, start_session, RespondentInput, Session};
pub use questionnaire::{builtin_study, parse_questionnaire, Condition, Questionnaire};
pub use transcript::{Timestamp, Transcript, TranscriptRecord};
