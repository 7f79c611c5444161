use thiserror::Error;

/// Errors surfaced by solvers, factorizations and loaders.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-side contract was violated (bad dimensions, invalid
    /// configuration, index out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Cholesky factorization hit a nonpositive pivot.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    /// A matrix required to have full column rank does not.
    #[error("matrix is rank deficient (column {0})")]
    RankDeficient(usize),

    /// The supplied direction does not point downhill.
    #[error("not a descent direction (g'v = {0:.3e})")]
    NotDescent(f64),

    /// Backtracking exhausted its halving budget without sufficient decrease.
    #[error("line search failed after {0} halvings")]
    LineSearchFailed(usize),

    /// The iterate error grew past the divergence guard.
    #[error("divergence detected (error metric {0:.3e})")]
    Diverged(f64),

    /// Curvature estimate came out nonpositive.
    #[error("problem is not strongly convex (mu = {0:.3e})")]
    NotStronglyConvex(f64),

    /// Reference solve did not reach its gradient tolerance.
    #[error("reference solve stalled at gradient norm {0:.3e}")]
    ReferenceNotConverged(f64),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for a formatted contract violation.
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
