//! File formats, synthetic data and the command-line front end of the
//! neural-ODE text classifier in `odetext-core`.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod modelfile;
pub mod render;
pub mod synth;

pub use error::{CliError, CliResult};
