use thiserror::Error;

/// Errors raised by the solvers and simulators in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e} exceeds tolerance {tol:.3e})")]
    NotSymmetric { asymmetry: f64, tol: f64 },

    #[error("vector of length {0} is not a packed symmetric matrix (length must be n(n+1)/2)")]
    BadLength(usize),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("closed loop is not stable: spectral radius {rho:.6} >= {limit:.6}")]
    Unstable { rho: f64, limit: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("Cholesky factorisation failed: {0} is not numerically positive definite")]
    CholeskyFailure(&'static str),

    #[error("linear solve failed: {0} is numerically singular")]
    SingularSolve(&'static str),

    #[error("mean-field operator is not a contraction: L0 = {l0:.6} >= 1")]
    NotContraction { l0: f64 },

    #[error("non-finite iterate in {0}")]
    NonFinite(&'static str),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("actor iterate {iteration} left the stable region (spectral radius {rho:.6})")]
    UnstableIterate { iteration: usize, rho: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that signal a violated mathematical precondition of the
    /// instance (as opposed to a run that diverged or a malformed input).
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::Unstable { .. }
                | Error::NotContraction { .. }
                | Error::CholeskyFailure(_)
                | Error::SingularSolve(_)
                | Error::NoConvergence {
                    what: "Riccati iteration",
                    ..
                }
        )
    }

    /// True for errors raised when an iterative run blew up.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::UnstableIterate { .. } | Error::NoConvergence { .. }
        ) && !self.is_precondition()
    }
}
