use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("allocation matrix is rank deficient; use a damping factor epsilon > 0")]
    RankDeficient,

    #[error("plant integration produced a non-finite state at t = {t:.3} s")]
    IntegrationBlowup { t: f64 },

    #[error("SQP iterate became non-finite after {iterations} iterations")]
    SolverDivergence { iterations: usize },

    #[error("filter covariance lost positive definiteness: {0}")]
    FilterDivergence(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("quadratic program is infeasible")]
    QpInfeasible,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
