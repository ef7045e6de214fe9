//! Kronecker-structured splitting iterations for all-at-once space-time
//! systems produced by boundary value methods, and multitask Gaussian
//! process regression for predicting the splitting parameters.

pub mod banded;
pub mod bench;
pub mod bvm;
pub mod error;
pub mod kron;
pub mod mtgpr;
pub mod pipeline;
pub mod problems;
pub mod solvers;
pub mod spectral;
pub mod sparse;

pub use error::{Error, Result};
