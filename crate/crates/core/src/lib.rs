//! Numerical core for embedding-plus-encoder short-text classification.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every piece of math:
//! tokenization and vocabulary handling, a GloVe-style co-occurrence
//! factorizer, a bidirectional LSTM language model with ELMo-style layer
//! mixing, CNN / GRU / Transformer sequence encoders with exact
//! reverse-mode gradients, a binary classifier head with its training loop,
//! and the ROC/AUC metric suite.
//!
//! File formats, configuration and the command line live in the companion
//! `trollnet` crate.
//!
//! ```text
//! text ──tokenize──► ids ──pathway──► EmbeddedSequence ──encoder──► EncodedVector ──head──► p
//!                          (static | bi-LM + mixer | precomputed + mixer)   (cnn | gru | transformer)
//! ```

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod context_embed;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod static_embed;
pub mod train;

pub use error::{Error, Result};
pub use math::{EmbeddedSequence, Mat};
pub use params::{Gradients, ParamGroups};
