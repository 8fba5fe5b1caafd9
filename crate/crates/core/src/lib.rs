//! FFT-accelerated bandwidth matrix selection for multivariate kernel density
//! estimation.
//!
//! The crate bins a sample onto an equally spaced grid, evaluates pairwise
//! double sums of Gaussian-derivative kernels either directly or as a
//! zero-padded FFT convolution of grid counts with a kernel grid, and minimizes
//! the least-squares cross-validation criterion over unconstrained (or
//! diagonal) symmetric positive definite bandwidth matrices.

pub mod error;
pub mod fft;
pub mod functionals;
pub mod gauss;
pub mod grid;
pub mod linalg;
pub mod mixture;
pub mod selector;
pub mod strategy;
pub mod study;

pub use error::{Error, Result};
