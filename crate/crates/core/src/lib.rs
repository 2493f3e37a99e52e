//! Conditional diffusion toolkit for car-following trajectory prediction.
//!
//! The crate implements the full pipeline around a history-conditioned
//! diffusion model for three-vehicle platoons: trajectory ingestion and a
//! synthetic car-following generator, a GRU/attention/Fourier history
//! encoder that also sets the per-feature noise scale of the forward
//! diffusion, a cross-attention context encoder over leader and follower
//! streams, a 1-D U-Net noise predictor, and training, sampling,
//! evaluation and ablation harnesses.
//!
//! All numerics are `f64` and every stochastic component draws from a
//! stream derived from an explicit seed, so runs are reproducible
//! bit-for-bit.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod context;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod gru;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::Tensor;
