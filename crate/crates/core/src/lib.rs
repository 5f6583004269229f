//! Dual-stream CNN + vision-transformer fusion classifiers, combined by soft
//! voting, built on a small reverse-mode autodiff engine.

pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
