#![no_std]
//! Generative prototype learning for zero-shot human-object interaction
//! recognition.
//!
//! Everything here is `no_std` with `alloc`. File formats, caching of pretrained
//! features and the command line live in the `hoigen` crate.

extern crate alloc;

pub mod backend;
pub mod banks;
pub mod error;
pub mod evalmap;
pub mod generator;
pub mod geometry;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod prompts;
pub mod rng;
pub mod scoring;
pub mod synthetic;
pub mod taxonomy;

pub use error::{Error, Result};
