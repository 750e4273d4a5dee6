use thiserror::Error;

/// Errors raised by the solver, the simulators and the scenario loader.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimError { expected: String, found: String },
    #[error("invalid game: {0}")]
    InvalidGame(String),
    #[error("receiver weight R^T R is singular (min eigenvalue {min_eig:e})")]
    SingularReceiver { min_eig: f64 },
    #[error("posterior outside the feasible interval [O, prior] (violation {violation:e})")]
    InfeasiblePosterior { violation: f64 },
    #[error("{m} senders exceed the ordering cap of {cap}; pass an explicit subset")]
    TooManyOrderings { m: usize, cap: usize },
    #[error("invalid ordering {0:?}")]
    InvalidOrdering(Vec<usize>),
    #[error("posterior is not achievable by a noiseless linear policy (projection defect {defect:e})")]
    NotAchievable { defect: f64 },
    #[error("scaling matrix does not have orthonormal columns (defect {defect:e})")]
    InvalidScaling { defect: f64 },
    #[error("cooperative weights must be nonnegative with at least one positive entry")]
    InvalidWeights,
    #[error("propagated prior at stage {stage} is not positive definite (min eigenvalue {min_eig:e})")]
    DegeneratePrior { stage: usize, min_eig: f64 },
    #[error("receivers' coupled game has no unique Nash equilibrium (condition number {cond:e})")]
    NoUniqueReceiverNash { cond: f64 },
    #[error("{path}: {reason}")]
    Scenario { path: String, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
