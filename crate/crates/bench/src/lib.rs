//! Experiment harness: configuration, training pipeline, sweeps, plots.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod registry;
pub mod replay;
pub mod svg;
pub mod sweep;

#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("method {method} needs {what}; run `sncbf train` first or point `models` at the right directory")]
    MissingModel { method: String, what: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CmdError {
    pub fn stage(stage: &str, e: impl std::fmt::Display) -> Self {
        CmdError::Stage { stage: stage.into(), message: e.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Stage { .. } => 3,
            CmdError::MissingModel { .. } | CmdError::Io(_) => 4,
        }
    }
}

impl From<config::ConfigError> for CmdError {
    fn from(e: config::ConfigError) -> Self {
        CmdError::Config(e.to_string())
    }
}
