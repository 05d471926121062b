//! Deterministic cross-silo federated learning simulator for a gated
//! cross-modal fusion classifier over word-aligned audio/text features.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: dense matrices, softmax/sigmoid/linear/cross-entropy,
//!   AdamW, finite-difference gradient checks, the `.fpv` parameter format.
//! - [`model`]: the fusion classifier with hand-written backward pass.
//! - [`alignment`]: pause markers, frame-to-word pooling, padded samples.
//! - [`augmentation`]: speaker/content recombination and a synthetic corpus.
//! - [`federation`]: partitioning, client training, server aggregators,
//!   snapshot tracking, and the sFL/pFL/aFL deployment strategies.
//! - [`harness`]: k-fold experiments over the CL/LL/FL paradigms, grid
//!   search, metrics, and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod augmentation;
pub mod error;
pub mod federation;
pub mod harness;
pub mod label;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use label::Label;
