use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("manifest row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported audio format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("input too short: {frames} frames, need at least {required}")]
    TooShort { frames: usize, required: usize },

    #[error("leakage guard: test case `{id}` reached training stage `{stage}` in fold {fold}")]
    Leakage { fold: usize, stage: String, id: String },

    #[error("cell `{cell}`: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    Codec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
