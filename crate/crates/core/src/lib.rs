//! Approximate Bayesian inference for differential-equation models that sit
//! near a stable equilibrium.
//!
//! The dynamics are linearized at the equilibrium, the linear system's
//! spectral density (and its parameter derivatives) is computed from an
//! eigendecomposition, and the Whittle likelihood of the periodogram drives
//! MCMC. Kalman, extended Kalman, particle-filter and deterministic-ODE
//! likelihoods are provided as exact or reference backends.

pub mod error;
pub mod likelihood;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod spectral;
pub mod target;
pub mod zoo;

pub use error::{Error, Result};
pub use model::{
    find_equilibrium, linearize, select_equilibrium, stability_check, EquilibriumPoint,
    LinearSystem, Model, Scalar, StabilityReport,
};
