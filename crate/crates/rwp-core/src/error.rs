//! Error types shared across the crate.

use thiserror::Error;

/// Which of the two gradient evaluations a failure belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSide {
    First,
    Second,
}

impl std::fmt::Display for EvalSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalSide::First => write!(f, "first"),
            EvalSide::Second => write!(f, "second"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid model, dataset, or training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input shapes do not match the model's expectations.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A forward pass produced a non-finite activation.
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },

    /// A parameter update produced a non-finite value.
    #[error("non-finite parameter after update step {step}")]
    NonFiniteUpdate { step: usize },

    /// Gradient too small to normalize for a worst-case perturbation.
    #[error("degenerate gradient: norm {norm:e} below tolerance")]
    DegenerateGradient { norm: f64 },

    /// One of the two submitted gradient evaluations failed.
    #[error("{side} gradient evaluation failed: {source}")]
    EvalFailed {
        side: EvalSide,
        #[source]
        source: Box<CoreError>,
    },

    /// A worker thread died while evaluating.
    #[error("{side} gradient evaluation panicked in worker")]
    WorkerPanic { side: EvalSide },

    /// Malformed input file (IDX, checkpoint, dataset dump).
    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
