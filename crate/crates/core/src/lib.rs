//! Simulation and statistical verification of fluctuation limits for
//! interacting eigenvalue particle systems.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ensembles;
pub mod error;
pub mod fluctuations;
pub mod limits;
pub mod matrix;
pub mod harness;
pub mod models;
pub mod par;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
