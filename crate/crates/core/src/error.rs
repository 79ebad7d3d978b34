use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scale matrix not invertible")]
    SingularScale,

    #[error("{0} is singular")]
    Singular(&'static str),

    #[error("covariance does not exist for nu = {0} (requires nu > 2)")]
    CovarianceUndefined(f64),

    #[error("second moment does not exist")]
    SecondMomentUndefined,

    #[error("moments undefined: degrees of freedom must exceed 2 (got nu = {nu}, nu' = {nu_prime})")]
    MomentsUndefined { nu: f64, nu_prime: f64 },

    #[error("no scale factor table entry for n = {n}, nu = {nu}, nu' = {nu_prime}")]
    MissingTableEntry { n: usize, nu: f64, nu_prime: f64 },

    #[error("grid too small: {0:.3e} of the probability mass leaked outside the grid")]
    GridTooSmall(f64),

    #[error("zero evidence: likelihood vanishes on the whole grid")]
    ZeroEvidence,

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("search bracket failure: {0}")]
    Bracket(String),

    #[error("scenario infeasible for seed stream after {0} consecutive rejections")]
    ScenarioInfeasible(usize),

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
