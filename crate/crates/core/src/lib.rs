pub mod alerting;
pub mod autodiff;
pub mod backbone;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod pipeline;
pub mod presets;
pub mod scoring;
pub mod stats;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};

/// Double-precision aliases of the scalar-generic core.
pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Graph32 = autodiff::Graph<f32>;
