//! Sequential MCMC filtering for state-space models whose observations are
//! a deterministic (or nearly deterministic) function of the hidden state.
//!
//! At each observation time the filter lives on the level set
//! `M_k = {x : y_k - h_k(x) = 0}`. The crate provides:
//!
//! * [`manifold`]: constraint evaluation, Gram weights, tangent frames and
//!   Newton projection onto `M_k`;
//! * [`kernel`]: the reversible constrained random-walk Metropolis kernel;
//! * [`engine`]: the sequential driver with the subset-index auxiliary target;
//! * [`linear_noise`]: random-walk kernels for linear observations with
//!   vanishing Gaussian noise and a probe of their degenerate limit;
//! * [`models`]: the linear Gaussian, sphere, FitzHugh–Nagumo and
//!   Kuramoto–Sivashinsky reference models;
//! * [`oracles`] and [`diagnostics`]: ground truths and run diagnostics.

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod linear_noise;
pub mod manifold;
pub mod models;
pub mod oracles;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
