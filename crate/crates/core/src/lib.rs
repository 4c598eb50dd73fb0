//! Attention-adjusted graph spatio-temporal network (AGSTN) for
//! multi-sensor time series forecasting.
//!
//! The pipeline decomposes each sensor series into intrinsic mode functions
//! ([`signal`]), builds one cosine-similarity graph per window step
//! ([`graphs`]), and combines an LSTM head with a per-sensor convolution
//! over graph embeddings ([`seqmodels`]) into an attention-scaled forecast
//! ([`model`]). [`train`], [`data`] and [`eval`] cover optimization,
//! ingestion and metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the double-precision types used for training.

pub mod data;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod model;
pub mod numcore;
pub mod scalar;
pub mod seqmodels;
pub mod signal;
pub mod train;

pub use error::{CheckpointFault, Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = numcore::Matrix<f64>;
pub type Graph64 = numcore::Graph<f64>;
pub type Panel64 = data::Panel<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type WindowSample64 = model::WindowSample<f64>;
pub type WindowedDataset64 = data::WindowedDataset<f64>;
pub type ImfSet64 = signal::ImfSet<f64>;
