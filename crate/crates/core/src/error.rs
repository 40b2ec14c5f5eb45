use thiserror::Error;

use crate::strategy::FlowClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected} components, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("{class} loop in task {task}: {cycle:?}")]
    LoopDetected {
        task: usize,
        class: FlowClass,
        cycle: Vec<usize>,
    },

    #[error("flow state is infeasible (a cost function is at or beyond capacity)")]
    InfeasibleState,

    #[error("no feasible starting strategy: {0}")]
    NoFeasibleStart(String),

    #[error("every option of the row is blocked")]
    NoFeasibleDirection,

    #[error("control protocol stalled for task {task}; waiting nodes {waiting:?}")]
    ProtocolStall { task: usize, waiting: Vec<usize> },

    #[error("instance too large for exhaustive search: {0}")]
    SizeLimit(String),

    #[error("linear program: {0}")]
    Lp(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
