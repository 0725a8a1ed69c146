#![allow(clippy::needless_range_loop)]

//! Two-stage D-optimal sampling for controlled trials over large covariate
//! databases.
//!
//! Stage 1 greedily removes rows from the full table until the requested
//! sample size remains, maximizing the log-determinant of the sample
//! covariance via rank-one downdates. Stage 2 splits the sample into
//! control and treatment halves whose means and scatters agree, by random
//! initialization plus pairwise exchange. Designs are scored analytically
//! through the Fisher information matrix of the interaction model, and the
//! evaluation harness benchmarks them against random sampling.

pub mod allocator;
pub mod cli;
pub mod dataset;
pub mod design;
pub mod error;
pub mod evaluation;
pub mod linalg;
mod seeds;
pub mod selector;

pub use error::{Error, Result};
