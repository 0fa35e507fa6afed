//! File formats, datasets, the experiment harness and the command line for
//! `trollnet-core`.

mod bytes;
pub mod checkpoint;
pub mod config;
pub mod ctx;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod synth;
pub mod table;
pub mod vectors;

pub use error::{Error, Result};
