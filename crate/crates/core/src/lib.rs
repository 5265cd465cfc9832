//! Finite-difference simulation of the Kuramoto-Sivashinsky equation on an
//! expanding circle.
//!
//! The gradient `v = u_σ` of the radial perturbation is advanced with a
//! Crank-Nicolson scheme whose nonlinear term is handled by a few linearized
//! (Newton-type) iterations per step; the height `u` is recovered from `v`
//! and the evolution of its mean.

pub mod config;
pub mod exec;
pub mod experiments;
pub mod field;
pub mod model;
pub mod operators;
pub mod output;
pub mod radius;
pub mod reconstruct;
pub mod solver;
pub mod stability;

pub use field::{GridSpec, PeriodicField};
pub use model::{ModelParams, TimeGrid};
pub use radius::{RadiusLaw, RadiusPath};
pub use solver::{SolverConfig, StepContext, Trajectory};
