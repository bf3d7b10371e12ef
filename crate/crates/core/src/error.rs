use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("batch norm in train mode needs at least 2 rows, got {rows}")]
    DegenerateBatch { rows: usize },

    #[error("label {label} at index {index} is out of range for {classes} classes")]
    Label {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("row {row} has zero norm in {op}")]
    DegenerateVector { op: &'static str, row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("cannot read {}: {source}", path.display())]
    Ingestion {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {}: {detail} at byte offset {offset}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("model {index} flattens to a zero-norm vector")]
    DegenerateModel { index: usize },

    #[error("client {client} aborted in round {round}, epoch {epoch}, batch {batch}: {source}")]
    ClientAbort {
        client: usize,
        round: usize,
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round} failed: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
