//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("empty dataset: no active instances")]
    EmptyDataset,

    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("training did not converge: gradient norm {grad_norm:.3e} after {iters} iterations")]
    TrainingDidNotConverge { grad_norm: f64, iters: usize },

    #[error("singular system: Hessian factorization failed")]
    SingularSystem,

    #[error("degenerate constraint: normal direction is unattainable (a'H^-1 a = {value:.3e})")]
    DegenerateConstraint { value: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("stale claim: claim decided class {claimed} but model predicts {predicted}")]
    StaleClaim { claimed: u8, predicted: u8 },

    #[error("instance {0} is not active in the dataset")]
    InactiveInstance(usize),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
