use thiserror::Error;

/// Errors produced by the simulator, networks and learner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("expected {expected} actions, got {got}")]
    ActionArityMismatch { expected: usize, got: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("map format: {0}")]
    MapFormat(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
