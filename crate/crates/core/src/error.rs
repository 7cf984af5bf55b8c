use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite state")]
    NonFiniteState,
    #[error("singular network (|det| = {det:e})")]
    SingularNetwork { det: f64 },
    #[error("equilibrium not found after {iterations} iterations (residual {residual:e})")]
    EquilibriumNotFound { iterations: usize, residual: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("numerical blow-up in network forward pass")]
    NumericalBlowUp,
    /// Carries the best parameter vector seen before the loss went non-finite.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize, checkpoint: Vec<f64> },
    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },
    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),
    #[error("empty set: {0}")]
    Empty(&'static str),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
