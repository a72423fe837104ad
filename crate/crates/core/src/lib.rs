// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod equivalence;
pub mod error;
pub mod harness;
pub mod io;
mod linalg;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod solver;
pub mod spectrum;

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Version of the scenario JSON and CSV file layouts.
pub const FORMAT_VERSION: &str = "1";

pub use error::{Result, SpiceError};
pub use linalg::InversePath;
pub use model::{
    amplitudes_from_powers, build_sinusoid_dictionary, compute_weights, form_covariance,
    Dictionary, Signal, SpiceState, Weights, C64,
};
pub use solver::{solve, NoiseMode, SpiceConfig, SpiceSolution};
