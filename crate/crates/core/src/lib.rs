//! Hyperbolic graph attention networks for signed functional-connectivity
//! graphs, built on the Lorentz (hyperboloid) model.
//!
//! The crate provides:
//!
//! - a reverse-mode autodiff tape over dense f64 tensors ([`tape`]),
//! - Lorentz-model geometry: inner product, distance, exp/log maps,
//!   parallel transport, projections ([`manifold`]),
//! - signed sparse graph construction from ROI time series ([`graph`]),
//! - the hyperbolic attention layer stack with signed aggregation
//!   ([`layers`]) and the Frechet-mean readout ([`readout`]),
//! - an AdamW training harness with stratified cross-validation,
//!   metrics, and checkpointing ([`train`], [`metrics`], [`optim`]),
//! - a synthetic hierarchical benchmark and a tree-embedding distortion
//!   experiment ([`synth`]),
//! - self-test property suites shared with the CLI ([`selftest`]).

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod layers;
pub mod manifold;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod readout;
pub mod selftest;
pub mod synth;
pub mod train;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
