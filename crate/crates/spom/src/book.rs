//! The guide's code blocks, compiled and run as doctests.
//!
//! Each chapter of `book/` is included as a hidden module's documentation,
//! so `cargo test` executes every snippet in the book and the guide can
//! never drift from the API.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/representations.md")]
mod representations {}

#[doc = include_str!("../../../book/src/decoder.md")]
mod decoder {}

#[doc = include_str!("../../../book/src/autodiff.md")]
mod autodiff {}

#[doc = include_str!("../../../book/src/data.md")]
mod data {}

#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[doc = include_str!("../../../book/src/formats.md")]
mod formats {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
