use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Most variants mark a parameter set as unusable; samplers turn them into a
/// log-density of minus infinity instead of aborting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("equilibrium solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no stable equilibrium among the candidates")]
    EmptyCandidates,
    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),
    #[error("bordered eigenvector system is singular for eigenvalue {0}")]
    SingularBorderedSystem(usize),
    #[error("parameter outside the model domain: {0}")]
    Domain(String),
    #[error("series length {0} is not supported (need an even length of at least 4)")]
    Length(usize),
    #[error("spectral density is not positive at frequency index {0}")]
    NonpositiveDensity(usize),
    #[error("autocovariance has an imaginary residual of {0:.3e}")]
    ImagResidual(f64),
    #[error("autocovariance tail has not converged (last-decade share {0:.3e})")]
    TailNotConverged(f64),
    #[error("filter diverged at observation {0}")]
    FilterDivergence(usize),
    #[error("all particle weights vanished at observation {0}")]
    WeightCollapse(usize),
    #[error("path became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("target density is not finite at the initial point")]
    InitInvalid,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, Error>;
