//! Correctness signals recovered from token-level confidence trajectories.
//!
//! This crate is `no_std` (it needs `alloc`) and holds every numerical piece
//! of the toolkit: per-token confidence, tail/head/window alignment, the
//! convolutional readout with its hand-written backward pass and trainer,
//! hand-crafted baseline scorers, discrimination and geometry metrics, and
//! score-weighted answer voting. File formats, the HTTP harvester, sweeps and
//! the command-line tool live in the `trajconf` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod math;

pub mod aggregation;
pub mod baselines;
pub mod dataset;
pub mod estimator;
pub mod metrics;
pub mod scores;
pub mod synthetic;
pub mod trajectory;

pub use error::{Error, Result};
pub use scores::ScoreTable;
