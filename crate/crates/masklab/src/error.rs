//! One error type for the whole crate.

use thiserror::Error;

/// Errors surfaced by corpus handling, modeling, analysis, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Line numbers are 1-based and refer to the offending JSONL record.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("unknown token {token:?}")]
    UnknownToken { token: String },

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("no masked targets in sequence")]
    NoTargets,

    #[error("target at position {pos} is not a mask token")]
    TargetNotMasked { pos: usize },

    #[error("document has no annotations: {0}")]
    MissingAnnotations(String),

    #[error("undefined correlation: input is constant")]
    ConstantInput,

    #[error("misaligned triples: {docs} documents but {triples} triples")]
    MisalignedTriples { docs: usize, triples: usize },

    #[error("training diverged at iteration {iteration}: {msg}")]
    Diverged { iteration: usize, msg: String },

    #[error("reports disagree: {0}")]
    ReportMismatch(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Helper for ad-hoc configuration errors.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
