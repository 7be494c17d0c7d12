use thiserror::Error;

use crate::net_ir::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {}", join_violations(.0))]
    InvalidNetwork(Vec<Violation>),

    #[error("layer `{layer}`: count overflows 64 bits")]
    Overflow { layer: String },

    #[error("array must have at least one row and one column (got {rows}x{cols})")]
    EmptyArray { rows: usize, cols: usize },

    #[error("layer `{0}` holds no weights and cannot be mapped")]
    NotWeighted(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing weights for layer `{0}`")]
    MissingWeights(String),

    #[error("rescaled noise requires a defined, non-negative layer maximum")]
    MissingLayerMax,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input (specs, flags, file contents)
    /// rather than by the environment.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Csv(_))
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
