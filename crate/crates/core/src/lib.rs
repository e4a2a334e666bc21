//! Randomised-signature reservoirs, RS-W₁ / C-RS-W₁ pseudometrics and
//! reservoir neural-SDE generators for time-series data.

pub mod activation;
pub mod data;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod signature;
pub mod training;
pub mod universality;

pub use activation::Activation;
pub use error::{Result, RsigError};
pub use signature::{delta_rs_terminal, sample_rs_params, RsParams, RsPath};
