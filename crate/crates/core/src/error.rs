//! Error types shared across the diffusion, guidance, and controller stacks.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule config: {0}")]
    InvalidScheduleConfig(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid DDIM step pair (k={k}, k_prev={k_prev})")]
    InvalidStepPair { k: usize, k_prev: usize },
    #[error("training loss became non-finite; reduce the learning rate")]
    NonFiniteLoss,
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("tracking-cost oracle returned a non-finite gradient")]
    NonFiniteGradient,
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Solver(#[from] MpcError),
}

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("solver diverged: no accepted step within the iteration budget")]
    SolverDiverged,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("scripted expert cannot reach the goal: {0}")]
    InfeasibleTask(String),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file: {0}")]
    MalformedDataset(String),
}
