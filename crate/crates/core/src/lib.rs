//! Tensor neural network (TNN) solvers for high-dimensional elliptic
//! eigenvalue and boundary-value problems.
//!
//! A TNN is a learned rank-`p` separable function
//! `Ψ(x) = Σ_j Π_i φ_{i,j}(x_i)`, where each `φ_i` is a small network with a
//! scalar input. Because of this structure every integral in the training
//! loss splits into one-dimensional Gauss–Legendre quadratures, so training
//! runs full-batch on fixed quadrature points at a cost polynomial in the
//! dimension.
//!
//! Module map:
//! - [`quadrature`]: composite Gauss–Legendre grids
//! - [`diffengine`]: values, input-derivatives and parameter gradients of a subnetwork
//! - [`network`]: subnetworks, the TNN model and checkpoints
//! - [`integrals`]: Gram matrices and the separated integration scheme
//! - [`training`]: losses, gradients, optimizers and the training loop
//! - [`problems`]: benchmark problems and error metrics
//! - [`config`] / [`runner`]: run configuration and the experiment driver

pub mod check;
pub mod config;
pub mod diffengine;
pub mod error;
pub mod integrals;
pub mod network;
pub mod oracle;
pub mod problems;
pub mod quadrature;
pub mod runner;
pub mod training;

pub use error::{Result, TnnError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
