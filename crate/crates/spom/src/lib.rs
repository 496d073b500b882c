//! Task-success prediction for open-vocabulary manipulation (SPOM).
//!
//! Given an instruction sentence and embeddings of the scene before and
//! after a manipulation, the pipeline assembles a multi-level token
//! representation per image, contrasts the two through cross-attention,
//! aligns the difference with the instruction, and emits the probability
//! that the manipulation succeeded.
//!
//! The crate deliberately stops at the embedding boundary: vision and text
//! backbones are external [`representation::EmbeddingProvider`]s (files on
//! disk, a deterministic synthetic generator, or a remote service), so the
//! whole pipeline trains and evaluates on one CPU core.
//!
//! A narrative guide lives in `book/`; its code snippets compile and run as
//! part of `cargo test`.

#[cfg(doctest)]
mod book;

pub mod error;
pub mod harness;
pub mod dataset;
pub mod decoder;
pub mod numerics;
pub mod representation;
pub mod rng;

pub use error::{Error, Result};
