pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod growprune;
pub mod ingest;
pub mod matrix;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod search;
pub mod simulate;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

/// Concrete types at the two supported float widths.
pub type Mlp = network::MaskedMlp<f64>;
pub type Mlp32 = network::MaskedMlp<f32>;
pub type Features = Matrix<f64>;
pub type Features32 = Matrix<f32>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
