//! Mean-field simulation of dielectrophoretically steered chiplet populations.
//!
//! The crate covers the grid discretization, the capacitance-based interaction
//! model, a stochastic particle simulator, discrete optimal transport, and the
//! density evolution (proximal JKO steps and an explicit finite-volume solver).

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod meanfield;
pub mod model;
pub mod particles;
pub mod transport;

pub use error::{Error, Result};
