//! File formats, benchmarking harness and command-line workflow around
//! `s2ut-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod measure;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
