//! Simulator for federated fine-tuning with gradient-guided transformer
//! block expansion.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: a tiny transformer classifier with exact reverse-mode gradients.
//! * [`expansion`]: choosing, placing and building zero-initialised expanded blocks.
//! * [`datagen`]: seeded synthetic tasks with a known decision rule.
//! * [`federation`]: partitioning, block allocation, simulated local training
//!   and aggregation.
//! * [`harness`]: experiment configuration, forgetting measurement and reports.

// positivity checks are written `!(x > 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod expansion;
pub mod federation;
pub mod harness;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
