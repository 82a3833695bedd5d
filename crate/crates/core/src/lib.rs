//! Dynamical systems method solvers for operator equations `F(u) = 0`.

// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod error;
pub mod experiment;
pub mod field;
pub mod integrate;
pub mod linalg;
pub mod operator;
pub mod path;
pub mod quadrature;
pub mod sampling;
pub mod scalar_fn;
pub mod schedule;
pub mod stopping;
pub mod zoo;

pub use error::{DsmError, Result};
pub use linalg::{Matrix, Vector};
