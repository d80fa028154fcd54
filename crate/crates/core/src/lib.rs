//! Two-stream collocation solver for nonlinear PDE benchmarks.
//!
//! A feed-forward network stream and a graph-convolutional stream are trained
//! against a physics loss on a discretized domain, then fused by a small
//! trained head. The crate covers domain discretization and graph building,
//! exact forward/reverse automatic differentiation, the four benchmark
//! equations (1D/2D Burgers and Schrödinger), independent reference
//! solutions, L-BFGS training and test-set scoring.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod graph;
pub mod jets;
pub mod lbfgs;
pub mod models;
pub mod oracle;
pub mod problems;
pub mod train;

pub use error::{Error, Result};
