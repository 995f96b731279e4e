//! DNA sequence feature learning for binary gene classification.
//!
//! The pipeline: parse and clean sequences ([`seqio`]), extract handcrafted
//! features ([`featurize`]), train a 1D CNN ([`convnet`]) whose embeddings
//! feed a random forest ([`forest`]) in a [`hybrid`] model, score it with a
//! precision-first harness ([`eval`]), and triage confident predictions
//! against a co-expression network ([`coexp`]). [`synth`] generates
//! benchmarks with planted ground truth.

pub mod cli;
pub mod coexp;
pub mod config;
pub mod convnet;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod forest;
pub mod hybrid;
pub mod rng;
pub mod seqio;
pub mod synth;

pub use error::{Error, Result};
