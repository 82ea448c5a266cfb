//! Surjectivity laboratory for residual-stream network blocks.
//!
//! The crate provides exact forward maps and analytic Jacobians for the
//! block types that make up modern sequence models (MLPs, layer
//! normalization, causal softmax attention, gated linear attention,
//! pre-norm transformer blocks), together with pre-image solvers that
//! recover inputs from outputs, a Brouwer degree oracle for low
//! dimensions, and witness constructions that certify when a target is
//! unreachable.
//!
//! The primary interface is the `examples/` directory: each runnable
//! example exercises one capability end to end, e.g.
//!
//! ```text
//! cargo run --release -p surjlab --example invert_preln_block
//! cargo run --release -p surjlab --example degree_oracle
//! cargo run --release -p surjlab --example verdict_battery
//! ```
//!
//! A thin `surjlab` binary exposes the same machinery for file-driven
//! runs (`gen`, `forward`, `invert`, `battery`, `witness`, `degree`).
//!
//! Solvers report a recomputed forward residual in every
//! [`solvers::InversionResult`]; a `converged` flag is never set without
//! an independent forward check backing it.

#![forbid(unsafe_code)]

pub mod blocks;
pub mod cli;
pub mod degree;
pub mod error;
pub mod harness;
pub mod io;
pub mod numerics;
pub mod solvers;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
