//! Server configuration: a JSON file plus `CONVOPROBE_*` environment
//! overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentBackend, LlmBackend, LlmConfig, ReferenceBackend, ReferenceConfig};
use crate::questionnaire::{builtin_study, parse_questionnaire, Questionnaire};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("environment variable {name}: {reason}")]
    Env { name: String, reason: String },
    #[error("questionnaire {path}: {reason}")]
    Questionnaire { path: PathBuf, reason: String },
    #[error("agent backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Reference(ReferenceConfig),
    Llm(LlmConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Reference(ReferenceConfig::default())
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn AgentBackend>, ConfigError> {
        Ok(match self {
            BackendConfig::Reference(c) => Arc::new(ReferenceBackend::new(c.clone())),
            BackendConfig::Llm(c) => {
                Arc::new(LlmBackend::new(c.clone()).map_err(|e| ConfigError::Backend(e.to_string()))?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    /// Idle time after which an active session counts as dropped out.
    pub timeout_secs: u64,
    /// JSONL transcript store; in-memory when unset.
    pub store_path: Option<PathBuf>,
    /// fsync every append (`true`) or only flush (`false`).
    pub fsync: bool,
    pub backend: BackendConfig,
    /// Extra questionnaire files, selectable by id when creating a session.
    pub questionnaires: Vec<PathBuf>,
    /// Advisory delay a client may show as a typing indicator.
    pub typing_delay_ms: u64,
    /// How often idle sessions are swept for expiry.
    pub sweep_interval_secs: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            timeout_secs: crate::engine::DEFAULT_DROPOUT_TIMEOUT.as_secs(),
            store_path: None,
            fsync: true,
            backend: BackendConfig::default(),
            questionnaires: Vec::new(),
            typing_delay_ms: 0,
            sweep_interval_secs: 60,
        }
    }
}

impl ServerConfig {
    /// Defaults, then the file (if any), then environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        config.apply_env(|name| std::env::var(name).ok())?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// Recognized variables: `CONVOPROBE_BIND`, `CONVOPROBE_TIMEOUT_SECS`,
    /// `CONVOPROBE_STORE`, `CONVOPROBE_FSYNC`, `CONVOPROBE_BACKEND`
    /// (`reference` or `llm`), `CONVOPROBE_LLM_BASE_URL`, `CONVOPROBE_LLM_MODEL`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let bad = |name: &str, reason: &str| ConfigError::Env { name: name.into(), reason: reason.into() };
        if let Some(v) = var("CONVOPROBE_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("CONVOPROBE_TIMEOUT_SECS") {
            self.timeout_secs = v.parse().map_err(|_| bad("CONVOPROBE_TIMEOUT_SECS", "expected whole seconds"))?;
        }
        if let Some(v) = var("CONVOPROBE_STORE") {
            self.store_path = (!v.is_empty()).then(|| PathBuf::from(v));
        }
        if let Some(v) = var("CONVOPROBE_FSYNC") {
            self.fsync = match v.as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(bad("CONVOPROBE_FSYNC", "expected true or false")),
            };
        }
        if let Some(v) = var("CONVOPROBE_BACKEND") {
            self.backend = match (v.as_str(), &self.backend) {
                ("reference", BackendConfig::Reference(_)) | ("llm", BackendConfig::Llm(_)) => self.backend.clone(),
                ("reference", _) => BackendConfig::Reference(ReferenceConfig::default()),
                ("llm", _) => BackendConfig::Llm(LlmConfig::default()),
                _ => return Err(bad("CONVOPROBE_BACKEND", "expected reference or llm")),
            };
        }
        if let BackendConfig::Llm(llm) = &mut self.backend {
            if let Some(v) = var("CONVOPROBE_LLM_BASE_URL") {
                llm.base_url = v;
            }
            if let Some(v) = var("CONVOPROBE_LLM_MODEL") {
                llm.model = v;
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    /// The built-in study followed by any configured questionnaire files.
    pub fn load_questionnaires(&self) -> Result<Vec<Questionnaire>, ConfigError> {
        let mut out = vec![builtin_study()];
        for path in &self.questionnaires {
            out.push(load_questionnaire(path)?);
        }
        Ok(out)
    }
}

pub fn load_questionnaire(path: &Path) -> Result<Questionnaire, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    parse_questionnaire(&text).map_err(|e| ConfigError::Questionnaire { path: path.into(), reason: e.to_string() })
}
