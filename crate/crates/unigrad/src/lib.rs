//! Universal adaptive stochastic gradient methods for composite convex
//! optimization.
//!
//! The crate provides four solvers — plain and accelerated stochastic
//! gradient descent plus their explicitly variance-reduced (epoch-based)
//! versions — whose stepsizes adapt on the fly via AdaGrad-type update rules.
//! None of them needs smoothness or noise constants; the only essential
//! parameter is the diameter of the feasible set.
//!
//! Modules:
//! - [`numerics`]: vectors and the weighted Euclidean geometry;
//! - [`prox`]: composite parts and proximal mappings;
//! - [`oracle`]: stochastic gradient oracles, mini-batching, variance
//!   reduction, variance estimators;
//! - [`stepsize`]: the adaptive stepsize update rules;
//! - [`solvers`]: the four methods and the shared epoch subroutine;
//! - [`problems`]: concrete problem instances and generators;
//! - [`theory`]: closed-form rate bounds and analysis utilities;
//! - [`experiment`]: the benchmark runner behind the CLI;
//! - [`verify`]: the built-in cross-module property suite.

pub mod error;
pub mod experiment;
pub mod numerics;
pub mod oracle;
pub mod problems;
pub mod prox;
pub mod solvers;
pub mod stepsize;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
pub use numerics::{Geometry, Vector};

/// Library version, echoed into experiment outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
