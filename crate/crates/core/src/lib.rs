//! Finite-horizon optimal control of a spring-coupled cart-pole chain,
//! posed as a constrained factor graph and solved by variable elimination.
//!
//! The pipeline: [`cartpole`] builds the graph, [`elimination`] turns it into
//! a Bayes net of Gaussian conditionals and back-substitutes, and
//! [`solvers`] holds the dense Riccati baseline, a KKT oracle and the
//! Levenberg-Marquardt loop for the nonlinear model.

pub mod cartpole;
pub mod cli;
pub mod elimination;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod solvers;

pub use error::{Error, Result};
pub use graph::{Factor, FactorGraph, Solution, VariableKey, VariableKind};
pub use linalg::{Matrix, RowWeight};
