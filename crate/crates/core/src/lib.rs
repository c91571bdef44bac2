pub mod adapter;
pub mod cdc;
pub mod checkpoint;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod harness;
pub mod histogram;
pub mod metrics;
pub mod module;
pub mod objective;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::Tensor;
