use thiserror::Error;

use crate::solver::IterationTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor order {0}, need at least 2")]
    InvalidOrder(usize),

    #[error("invalid dimension tree: {0}")]
    InvalidTree(String),

    #[error("capacity exceeded: {entries} entries requested, limit is {limit}")]
    Capacity { entries: usize, limit: usize },

    #[error("tensors live on different dimension trees or mode sizes")]
    TreeMismatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular system")]
    Singular,

    #[error("iteration limit of {limit} reached")]
    MaxIterations { limit: usize, trace: Box<IterationTrace> },

    #[error("residual tolerance underflow at iteration {iteration}")]
    ToleranceUnderflow {
        iteration: usize,
        trace: Box<IterationTrace>,
    },
}
