//! Fractional-gradient optimization: Caputo fractional gradients for smooth
//! objectives (closed form on quadratics, Gauss-Jacobi quadrature in
//! general), static and adaptive-terminal descent variants, and a learned
//! per-coordinate controller that emits the fractional hyperparameters at
//! every step. Built on a small reverse-mode autodiff graph that supports
//! differentiating through unrolled optimization.

pub mod autodiff;
pub mod cfgd;
pub mod error;
pub mod hessian;
pub mod objective;
pub mod meta;
pub mod optnet;
pub mod problems;
pub mod quadrature;
pub mod rng;
pub mod tensor;
pub mod testing;

pub use autodiff::{Graph, NodeId};
pub use error::{CoreError, Result};
pub use objective::Objective;
pub use tensor::Tensor;
