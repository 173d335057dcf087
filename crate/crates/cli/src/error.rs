use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("duplicate task_id {task_id:?} on lines {first} and {second}")]
    DuplicateTask { task_id: String, first: usize, second: usize },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("usage: {0}")]
    Usage(String),
    #[error("unknown backend set {0:?}")]
    UnknownBackendSet(String),
    #[error("run directory {0} has no run-manifest.json")]
    NotARun(PathBuf),
    #[error(transparent)]
    Core(#[from] vmfuq_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit status: everything that reaches the top level is a
    /// usage or configuration problem.
    pub fn exit_code(&self) -> i32 {
        1
    }
}
