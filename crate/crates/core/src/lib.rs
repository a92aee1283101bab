//! Spatiotemporal graph interpolation: train a diffusion graph
//! convolutional network on partially observed street-network count
//! panels and predict the series at sensor-free nodes.
//!
//! The crate is organized bottom-up:
//!
//! - [`mat`] / [`autodiff`] — dense `f64` matrices and a tape-based
//!   reverse-mode engine sized for this model family;
//! - [`graph`] — adjacency construction, transition matrices, Chebyshev
//!   application, connectivity features;
//! - [`dataio`] — panel loading, scaling, outlier handling, synthetic
//!   data, split plans;
//! - [`sampler`] — masked training samples over non-overlapping windows;
//! - [`model`] — the 3-layer DGCN with its four output heads;
//! - [`losses`] — masked MAE/MSE/GNLL/NB/ZINB objectives;
//! - [`trainer`] — Adam + plateau schedule + checkpointing;
//! - [`metrics`] — test-time interpolation and evaluation metrics;
//! - [`attribution`] — integrated-gradients feature importance.
//!
//! Data-parallel inner loops (matrix products, evaluation chunks,
//! finite-difference sweeps, attribution steps) go through [`par`], which
//! is compiled against rayon under the default `parallel` feature and
//! falls back to identical sequential loops without it.

pub mod attribution;
pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod graph;
pub mod losses;
pub mod mat;
pub mod metrics;
pub mod model;
pub mod par;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
