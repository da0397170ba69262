//! Compressed-domain two-stream video recognition at desk scale.

pub mod bench;
pub mod codec;
pub mod data;
pub mod distill;
pub mod flow;
pub mod models;
pub mod pipeline;
pub mod tensor;
pub mod scalar;
pub mod seed;

pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Network32 = models::Network<f32>;
pub type Network64 = models::Network<f64>;
pub type FlowField32 = flow::FlowField<f32>;
pub type FlowField64 = flow::FlowField<f64>;
