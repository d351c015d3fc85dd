use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("probability vector is not stochastic: {0}")]
    NotStochastic(String),
    #[error("branching factor at stage {0} is zero")]
    ZeroBranching(usize),
    #[error("node probability {prob:e} of node {node} is below the admissible minimum")]
    DegenerateProbability { node: usize, prob: f64 },
    #[error("invalid tree structure: {0}")]
    InvalidTree(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),
    #[error("matrix is not positive (semi)definite: {0}")]
    NotPositive(String),
    #[error("cholesky factorisation failed at node {0}")]
    Cholesky(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
