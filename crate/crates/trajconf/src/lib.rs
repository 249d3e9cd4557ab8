//! File formats, the endpoint harvester, experiment sweeps and the
//! command-line front end for `trajconf-core`.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod export;
pub mod harvest;
pub mod ingest;
pub mod jobs;
pub mod scoring;

pub use error::{Error, Result};
