//! Command-line front end: simulate pseudo-data, run MCMC inference, check
//! the Whittle-accuracy heuristic and time likelihood backends.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod models;

pub use config::InferenceConfig;
pub use error::{CliError, CliResult};
