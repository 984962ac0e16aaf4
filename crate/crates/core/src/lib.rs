pub mod checkpoint;
pub mod corrupt;
pub mod data;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod net;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dims, Scalar, Tensor4};
