//! Multi-site PV power forecasting with spatio-temporal graph neural networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: tensors, a reverse-mode tape, Adam, checkpoints
//! * [`graph`]: kNN graphs, Laplacians, Chebyshev graph convolution
//! * [`clearsky`]: solar geometry and Ineichen–Perez clear-sky irradiance
//! * [`datagen`]: synthetic cloud-advection production, CSV ingest, windows
//! * [`gclstm`] / [`gctrafo`]: the two encoder–decoder forecasters
//! * [`train`] / [`eval`]: training loop, metrics, baselines
//!
//! Batch gradients, window evaluation and clear-sky tables fan out over
//! rayon when the `parallel` feature (default) is on; see [`exec`].

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod clearsky;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gclstm;
pub mod gctrafo;
pub mod graph;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
