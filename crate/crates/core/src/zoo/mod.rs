//! Concrete models and their steady-state reparameterizations.

pub mod fhn;
pub mod ho;
pub mod npm;
pub mod reparam;

pub use fhn::{fhn_equilibria, Fhn, FhnParams};
pub use ho::{harmonic_oscillator, HarmonicOscillator, HoParams};
pub use npm::{Npm, NpmParams};
pub use reparam::{
    log_jacobian, AnyReparam, FhnReparam, FhnVariant, NpmReparam, ReparamMap, Source,
};
