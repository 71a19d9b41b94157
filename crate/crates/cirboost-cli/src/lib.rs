//! Experiment harness for the `cirboost` estimators: convergence studies,
//! variance tables, sample allocation, pricing and deterministic checks.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, ModelKind, Settings};
pub use experiments::{Report, Row, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] cirboost::Error),
    #[error("io: {0}")]
    Io(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Model(_) => "model",
            CliError::Io(_) => "io",
            CliError::Check(_) => "check",
        }
    }

    /// Machine-readable record printed on failure.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}
