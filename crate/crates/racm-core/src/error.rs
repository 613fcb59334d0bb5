//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Shape or dimension disagreement between operands.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A record in an input file failed validation.
    #[error("record {ordinal}: {reason}")]
    BadRecord { ordinal: usize, reason: String },

    /// Two records share an id.
    #[error("duplicate post id {id:?} (record {ordinal})")]
    DuplicateId { id: String, ordinal: usize },

    /// A corpus is too small or empty for the requested operation.
    #[error("corpus unusable: {0}")]
    CorpusTooSmall(String),

    /// A token id fell outside the embedding table.
    #[error("token id {id} out of range (vocabulary size {vocab})")]
    TokenOutOfRange { id: u32, vocab: usize },

    /// A softmax row had no unmasked entry.
    #[error("row {row} is fully masked")]
    FullyMaskedRow { row: usize },

    /// A post with no unmasked token anywhere.
    #[error("post {id:?} has no unmasked tokens")]
    EmptyPost { id: String },

    /// kNN was asked for more neighbours than the source holds.
    #[error("k={k} exceeds the {available} available entries")]
    KTooLarge { k: usize, available: usize },

    /// A persisted file failed structural validation.
    #[error("bad file at byte {offset}: {reason}")]
    BadFile { offset: usize, reason: String },

    /// Vector or payload width disagreement between a file and the caller.
    #[error("width mismatch: file has d={file_d}, expected d={expected_d}")]
    WidthMismatch { file_d: usize, expected_d: usize },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    /// A scalar function handed to the gradient checker returned non-finite.
    #[error("non-finite value in gradient check: {0}")]
    NonFinite(String),

    /// Retrieval requested without a knowledge source.
    #[error("retrieval is enabled but no knowledge source was provided")]
    MissingIndex,

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
