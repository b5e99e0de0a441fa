//! Multi-source urban traffic forecasting laboratory.
//!
//! The pipeline runs end to end on a synthetic signalized grid:
//!
//! 1. [`roadnet`] builds the network, its data graph, K-Means regions and the drone grid.
//! 2. [`simcore`] augments an OD matrix and simulates vehicle trajectories at 0.5 s.
//! 3. [`edie`] turns trajectories into trajectory splits and derives segment speed (drone),
//!    point speed (loop detector), regional speed, MFD points and travel times.
//! 4. [`sensors`] decides which measurements exist (coverage, drone relocation, noise).
//! 5. [`dataset`] cuts sliding-window samples and normalizes them.
//! 6. [`tensor`] and [`himsnet`] implement the forecaster and its training loop.
//! 7. [`evalkit`] scores predictions and the constant baselines.
//!
//! [`pipeline`] wires the stages together from a single [`pipeline::RunConfig`].

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod edie;
pub mod error;
pub mod evalkit;
pub mod himsnet;
pub mod pipeline;
pub mod roadnet;
pub mod sensors;
pub mod simcore;
pub mod tensor;

pub use error::{Error, Result};
