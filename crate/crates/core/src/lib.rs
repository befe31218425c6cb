//! Distributed stochastic dual coordinate ascent for L2-regularized loss
//! minimization.
//!
//! - [`model`]: losses, conjugates and the single-coordinate dual step.
//! - [`data`]: sparse datasets, libsvm I/O, synthetic data, partitions.
//! - [`solver`]: the distributed outer loop and its update variants.
//! - [`comm`]: in-process and TCP reduce.
//! - [`diagnostics`]: objectives, convergence quantities and rate bounds.
//! - [`trace`]: per-round and per-step records and their CSV form.

pub mod comm;
pub mod data;
pub mod diagnostics;
pub mod model;
pub mod solver;
pub mod trace;
