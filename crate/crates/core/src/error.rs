use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DameError>;

#[derive(Debug, Error)]
pub enum DameError {
    #[error("record has no attributes")]
    EmptyRecord,

    #[error("record attribute name at position {0} is empty")]
    EmptyAttributeName(usize),

    #[error("missing dataset file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{file}: row {row}: {msg}")]
    Parse { file: String, row: usize, msg: String },

    #[error("{file}: row {row}: id `{id}` not found in {table}")]
    DanglingId {
        file: String,
        row: usize,
        id: String,
        table: String,
    },

    #[error("dataset integrity: {0}")]
    Integrity(String),

    #[error("batch size {requested} exceeds split size {available}")]
    BatchTooLarge { requested: usize, available: usize },

    #[error("domain index {index} out of range for {count} domains")]
    DomainOutOfRange { index: usize, count: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("pair at index {0} is unlabeled")]
    Unlabeled(usize),

    #[error("length mismatch: {left} predictions vs {right} gold labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("budget {budget} exceeds pool size {pool}")]
    BudgetTooLarge { budget: usize, pool: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
