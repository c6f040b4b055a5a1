//! File formats, feature caches, checkpoints, reports and the command line
//! around `hoigen-core`.

pub mod archive;
pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod plot;
pub mod records;
pub mod report;

pub use error::{Error, Result};
