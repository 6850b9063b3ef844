//! Core of a nested ("Matryoshka") sentence-embedding toolkit.
//!
//! Everything in this crate is allocation-only: no file system, no clock, no
//! threads. The companion `nestembed` crate adds file formats, checkpoints,
//! reports and the command-line driver.
//!
//! Module map:
//!
//! - [`numerics`]: vectors, matrices, the four similarity functions, Pearson
//!   and Spearman correlation, and a central-difference gradient checker.
//! - [`data`]: record types for triplets, labeled NLI pairs and scored STS
//!   pairs, deterministic batching and a synthetic corpus generator.
//! - [`encoder`]: a small bag-of-tokens encoder with an exact backward pass.
//! - [`losses`]: InfoNCE, the nested-dimension wrapper, CoSENT, pair
//!   classification losses and the per-task dispatcher.
//! - [`trainer`]: Adam, warmup/decay schedule and the two training regimes.
//! - [`eval`]: STS correlation grids, dimension retention, pair inspection.
//! - [`gradcheck`]: finite-difference checks of every loss gradient.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod encoder;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod numerics;
pub mod trainer;

pub use data::{Label, LabeledPair, ScoredPair, TripletExample};
pub use encoder::{EncoderParams, Tokenizer};
pub use eval::EvalReport;
pub use losses::{LossOutput, MatryoshkaSchedule};
pub use numerics::{Mat, SimilarityKind};
