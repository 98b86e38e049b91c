//! Differentiable operations, implemented as methods on [`crate::Var`].

pub mod activation;
pub mod arith;
pub mod conv;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod shape;
pub mod spatial;
