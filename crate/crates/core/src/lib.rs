//! Stochastic online convex optimization toolkit.
//!
//! The crate provides the Online Newton Step learner ([`ons`]), Bernstein
//! Online Aggregation ([`boa`]), their composition into adaptive expert
//! stacks ([`stack`]), the Gaussian and mixture probabilistic forecasters
//! used to turn time-series prediction into online convex problems
//! ([`forecast`]), and a simulation harness that measures true-risk regret
//! against offline comparators ([`sim`]).
//!
//! Vectors and matrices are `nalgebra` dense types throughout.

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boa;
pub mod error;
pub mod forecast;
pub mod geometry;
pub mod ons;
pub mod quad;
pub mod sim;
pub mod stack;
pub mod verify;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
