//! The guide's chapters as doc comments, so `cargo test` runs every snippet.
#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}

#[doc = include_str!("../../../book/src/scores.md")]
pub mod scores {}

#[doc = include_str!("../../../book/src/pvalues.md")]
pub mod pvalues {}

#[doc = include_str!("../../../book/src/ensembles.md")]
pub mod ensembles {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
