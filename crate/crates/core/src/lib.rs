//! Gaussian prediction and retrodiction of a continuously measured
//! mechanical oscillator.

pub mod cli;
pub mod demod;
pub mod error;
pub mod filters;
pub mod io;
pub mod model;
pub mod riccati;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use model::{derive_rates, DerivedRates, ModelParams};
