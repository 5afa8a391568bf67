//! Bound long-term position drift in a black-box dead-reckoned navigation
//! estimate by fusing it with loop-closure measurements.
//!
//! A commercial navigation system emits poses and marginal covariances but
//! hides its raw sensor data, noise models, and cross-covariances, so
//! loop-closure corrections cannot propagate along the trajectory. This crate
//! rebuilds the missing pieces from the estimate itself:
//!
//! 1. [`sdp`] solves, per timestep, a small semidefinite program for the
//!    information matrix that links consecutive marginal covariances;
//! 2. [`recovery`] turns the solution into an equivalent process covariance
//!    (optionally considering the heading uncertainty) and an equivalent
//!    measurement pair via eigendecomposition;
//! 3. [`measurements`] retrieves the equivalent interoceptive measurements
//!    that replay the input trajectory through the assumed process model;
//! 4. [`batch`] fuses the retrieved model with loop closures in a linear
//!    batch smoother, with an information-form Kalman filter as the replay
//!    oracle;
//! 5. [`sim`] and [`eval`] provide a drifting-vehicle simulator and the
//!    consistency-evaluation suite (relative displacement error, ANEES,
//!    Monte-Carlo harness).
//!
//! The `loopfuse` binary orchestrates the pipeline over the dataset files
//! defined in [`dataset`]; the `examples/` directory demonstrates each
//! capability on its own.

pub mod batch;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod filter;
pub mod measurements;
pub mod pipeline;
pub mod recovery;
pub mod sdp;
pub mod se2;
pub mod sim;
pub mod testing;

pub use error::{Error, Result};
