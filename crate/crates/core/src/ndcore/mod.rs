//! Dense matrices, a tape-based reverse-mode autodiff engine, Adam, and a
//! seeded counter-based RNG.

mod adam;
mod matrix;
mod nn;
mod rng;
mod tape;

pub use adam::Adam;
pub use matrix::Matrix;
pub use nn::{Activation, Mlp};
pub use rng::{mix, RngState};
pub use tape::{logsumexp, logsumexp_slice, Axis, Gradients, Tape, Var};
