//! Higher-order periodic homogenisation for curl-curl problems.
//!
//! The crate computes cell correctors and homogenised tensors of every order
//! for periodic coefficients, solves the truncated homogenised equations on a
//! torus, reconstructs two-scale approximations, and compares them against
//! direct fine-scale solutions.

pub mod cell;
pub mod constitutive;
pub mod error;
pub mod field;
pub mod fine;
pub mod homogenised;
pub mod laminate;
pub mod sem;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
