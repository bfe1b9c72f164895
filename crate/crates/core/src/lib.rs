//! Averaging, Gaussian and large-deviation fluctuations, metastability and
//! center-direction diagnostics for fast-slow maps of the two-torus.

pub mod averaged;
pub mod ensemble;
pub mod lyapunov;
pub mod error;
pub mod foliation;
pub mod numerics;
pub mod rng;
pub mod stochastic;
pub mod systems;
pub mod transfer;

pub use error::{Error, Result};
