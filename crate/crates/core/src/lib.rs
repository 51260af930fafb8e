//! Semi-supervised multinomial mixture text classification with an active
//! labeling loop.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`]: sparse document-feature matrices, splits and rebalancing.
//! * [`model`]: the mixture model and its EM fit (binary, multi-cluster
//!   binary and multiclass).
//! * [`keywords`]: keyword ledger and the prior boost it induces.
//! * [`active`]: batch selection, oracles, stopping rules and the loop.
//! * [`eval`]: confusion matrices, metrics and the Monte Carlo harness.
//! * [`synthetic`]: corpora drawn from a known mixture, for testing.
//!
//! With the default `parallel` feature, per-document work (E-step,
//! prediction) and independent benchmark cells run on rayon. Without it every
//! path runs sequentially; results are bit-identical either way.

pub mod active;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod keywords;
pub mod math;
pub mod model;
pub mod synthetic;

pub use error::{Error, Result};
