use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("insufficient excitation: regressor matrix has rank {rank} < {needed}")]
    InsufficientExcitation { rank: usize, needed: usize },

    #[error("improper posterior: information matrix is singular")]
    ImproperPosterior,

    #[error("singular noise covariance")]
    SingularCovariance,

    #[error("insufficient stabilizable samples: {survivors} of {requested} requested (pool {pool}, {weight_discards} cut by weight, {unstabilizable} unstabilizable)")]
    InsufficientSamples {
        survivors: usize,
        requested: usize,
        pool: usize,
        weight_discards: usize,
        unstabilizable: usize,
    },

    #[error("closed loop is not Schur stable (spectral radius {0})")]
    Unstable(f64),

    #[error("pair (A, B) is not stabilizable")]
    Unstabilizable,

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),

    #[error("unregistered variable reference (id {0})")]
    UnknownVariable(usize),

    #[error("semidefinite program is infeasible")]
    Infeasible,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
