//! Feature-level bias measurement with conditional mutual information.
//!
//! The bias of a representation `F = g(X)` with respect to a nuisance label
//! `Z` given the target `Y` is measured as `I(F; Z | Y)`, estimated with
//! Donsker-Varadhan critics as `I(F; Z, Y) - I(F; Y)`. Two training schemes
//! reduce it: a minimax penalty on the surrogate `I(F, Y; Z)` and per-batch
//! stochastic label noise.

pub mod cli;
pub mod debias;
pub mod error;
pub mod experiment;
pub mod fairmetrics;
pub mod infomeasure;
pub mod kv;
pub mod mine;
pub mod model;
pub mod ndcore;
pub mod synthdata;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
