use std::path::Path;

use bayesnav_core::{control, dependability, env, metrics, perception};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io on {path}: {message}")]
    Io { path: String, message: String },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Env(#[from] env::EnvError),
    #[error(transparent)]
    Perception(#[from] perception::PerceptionError),
    #[error(transparent)]
    Control(#[from] control::ControlError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Dependability(#[from] dependability::DependabilityError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Format(_) => "format",
            HarnessError::Env(_) => "env",
            HarnessError::Perception(_) => "perception",
            HarnessError::Control(_) => "control",
            HarnessError::Metrics(_) => "metrics",
            HarnessError::Dependability(_) => "dependability",
        }
    }

    /// Single-line JSON for machine consumption.
    pub fn machine_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Line {
            error: self.kind(),
            message: self.to_string(),
        })
        .expect("error line serializes")
    }
}
