//! Estimation: OLS treatment effects with optional covariates, Benjamini-Hochberg
//! adjustment per reporting family, and subgroup estimates.

pub mod bh;
pub mod dataset;
pub mod effects;
pub mod ols;

use thiserror::Error;

pub use bh::{bh_adjust, BhResult};
pub use dataset::{read_tidy_csv, session_dataset, write_tidy_csv, Covariate, SessionRow};
pub use effects::{adjust_families, treatment_effect, write_effects_csv, Effect, EffectSpec, SubgroupFilter};
pub use ols::{ols, ols_with, Design, Fit, OlsOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("design matrix is rank deficient; dependent columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("subgroup has no rows for {0}")]
    EmptySubgroup(String),
    #[error("dataset: {0}")]
    Dataset(String),
}
