//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("template error: missing placeholder value `{0}`")]
    Template(String),
    #[error("reply parse error: {0}")]
    Reply(String),
    #[error("backend error after {attempts} attempt(s): {message}")]
    Backend { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
