// SPDX-License-Identifier: MIT OR Apache-2.0

//! Context attribution for retrieval-augmented generation by leave-one-out
//! ablation and Jensen–Shannon divergence, with a small mechanistic toolkit.
//!
//! * [`attribution`]: sentence-level scores in `|C| + 1` backend calls.
//! * [`surrogate`]: the sparse linear surrogate baseline.
//! * [`mech`]: per-head and per-MLP JSD and head masking.
//! * [`semantic_gain`]: layer-wise logit-lens gains toward the response token.
//! * [`consensus`]: rank fusion and Spearman checks.
//! * [`harness`]: datasets, evaluation, benchmarking and reports.
//! * [`backend`]: the model contract, wire protocol and synthetic backends.
//! * [`mini_lm`]: an instrumented in-process transformer.

pub mod attribution;
pub mod backend;
pub mod consensus;
pub mod error;
pub mod harness;
pub mod mech;
pub mod mini_lm;
pub mod segmenter;
pub mod semantic_gain;
pub mod surrogate;

pub use error::{Error, Result};
