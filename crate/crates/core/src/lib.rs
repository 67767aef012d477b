pub mod complexity;
pub mod error;
pub mod graph;
pub mod harness;
pub mod layers;
pub mod model;
mod scalar;
pub mod streams;
pub mod tam;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Network64 = model::Network<f64>;
pub type Network32 = model::Network<f32>;
