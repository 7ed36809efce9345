//! Error type shared across the crate.

use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph contains a cycle involving node {0:?}")]
    CyclicGraph(NodeId),

    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("mechanism inverse undefined at input: {0}")]
    InversionFailure(String),

    #[error("linear solve produced non-finite values: {0}")]
    NumericalFailure(String),

    #[error("iteration diverged to non-finite values at step {step}: {context}")]
    NonFinite { context: String, step: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("energy increased for {0} consecutive iterations; solver is oscillating")]
    OscillationDetected(usize),

    #[error(
        "sparse solve infeasible: restricted residual {restricted:.3e} exceeds \
         10x the unrestricted residual {unrestricted:.3e}"
    )]
    InfeasibleSparsity { restricted: f64, unrestricted: f64 },

    #[error("unknown distance kind: {0}")]
    UnknownDistanceKind(String),

    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),

    #[error("model not found: {0}")]
    ModelNotFound(String),

    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),

    #[error("unknown node: {0}")]
    UnknownNode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
