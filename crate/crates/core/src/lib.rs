//! Direct speech-to-speech translation through discrete units.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod bench;
pub mod corpus;
pub mod ctc;
pub mod decode;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod units;
pub mod vocoder;

pub use error::{Error, Result};
