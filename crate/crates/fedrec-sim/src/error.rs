//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed record in a dataset file.
    #[error("{path}:{line}: {msg}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    /// Bad key/value in an experiment config file.
    #[error("config key `{key}` (line {line}): {msg}")]
    Config {
        key: String,
        line: usize,
        msg: String,
    },

    #[error("item index {item} out of range (model has {num_items} items)")]
    ItemOutOfRange { item: usize, num_items: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Non-finite value where a finite one is required; aborts the round.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
