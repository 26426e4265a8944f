use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("cell {cell_id}: duplicate entry for gene {gene}")]
    DuplicateEntry { cell_id: String, gene: u32 },

    #[error("cell {cell_id}: gene index {gene} out of range for {n_genes} genes")]
    GeneOutOfRange { cell_id: String, gene: u32, n_genes: usize },

    #[error("cell {cell_id}: level {level} is not strictly positive and finite")]
    InvalidLevel { cell_id: String, level: f64 },

    #[error("cell {0} has no expressed genes")]
    EmptyCell(String),

    #[error("duplicate cell id {0}")]
    DuplicateCell(String),

    #[error("cell {0} has no label")]
    MissingLabel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sketch configurations differ: {0}")]
    ConfigMismatch(String),

    #[error("counter overflow at row {row}, bucket {bucket}")]
    CounterOverflow { row: usize, bucket: usize },

    #[error("density of cell {0} is not strictly positive")]
    NonPositiveDensity(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("dataset has no labels but mode {0} requires them")]
    LabelsRequired(&'static str),

    #[error("enrichment needs at least one hit and one miss (hits {hits}, total {total})")]
    DegenerateHits { hits: usize, total: usize },

    #[error("weight file: {0}")]
    Weights(String),
}
