//! Stochastic variance-reduced Newton (SVRN) solvers for finite-sum convex
//! optimization, with Hessian averaging, classical baselines (subsampled
//! Newton, SVRG, exact Newton) and a condition-number-free randomized
//! least-squares solver built on leverage-score sampling and randomized
//! Hadamard preconditioning.

pub mod error;
pub mod linalg;
pub mod problem;
pub mod sampling;
pub mod optimizers;
pub mod lsq_solver;
pub mod harness;
pub mod parallel;

pub use error::Error;

/// Dense column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
