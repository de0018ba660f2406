//! Error type shared by configuration parsing and tensor shape validation.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("config key `{key}`: {msg}")]
    ConfigKey { key: String, msg: String },

    #[error("unknown config key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("shape error in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
