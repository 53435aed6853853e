//! Prompt-based self-training for few-shot multi-class text classification
//! with a mapping-free automatic verbalizer (MAV).
//!
//! The crate is organized by pipeline stage:
//!
//! - [`corpus`]: vocabulary, template wrapping, synthetic data, few-shot splits
//! - [`model`]: a small transformer encoder with a tied MLM head, trained from
//!   scratch with a tape-based reverse-mode differentiator
//! - [`verbalizers`]: MAV and the baseline classification heads
//! - [`selftrain`]: augmentations, the three losses and the training loop
//! - [`eval`]: accuracy, benefit ratio, clustering and attribution
//! - [`cli`]: the `mav` command line
//! - [`bench`]: the synthetic benchmark wiring shared by examples and tests

pub mod bench;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod selftrain;
pub mod verbalizers;

pub use error::{Error, Result};
