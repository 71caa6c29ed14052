//! Local neural transformations for anomaly detection within time series.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod scoring;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{LntError, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
