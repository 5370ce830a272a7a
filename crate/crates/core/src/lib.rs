//! Classifier-gated particle swarm tuning of MMA parameters for moving
//! morphable component (MMC) topology optimization.

// `!(x > 0.0)` rejects NaN on purpose; index loops follow the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fem;
pub mod forest;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod mma;
pub mod pso;
pub mod runner;
mod serde_float;
pub mod vision;
pub mod workbench;

pub use error::{Error, ParseError, Result};
