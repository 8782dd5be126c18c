//! Capacity curriculum for small transformer language models.
//!
//! Training runs in two phases. The pruning phase is layer-wise iterative
//! magnitude pruning: train, score every surviving weight by its magnitude
//! change `|w_current| - |w_initial|`, optionally rewind, then drop the
//! lowest-scoring fraction of each weight matrix. The growth phase replays
//! the recorded masks in reverse, reintroducing the most recently pruned
//! weights first and training after each step. Model capacity (percentage of
//! trainable weight-matrix entries) therefore traces a cup over the run.
//!
//! The crate carries everything needed to run that at desk scale: a small
//! reverse-mode autodiff engine ([`graph`]), a causal transformer LM
//! ([`model`]), the pruning machinery ([`prune`]), the two-phase engine
//! ([`curriculum`]), a word-level data pipeline ([`data`]), rank-sum
//! statistics ([`stats`]) and an experiment harness ([`experiment`]).

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod optim;
pub mod param;
pub mod prune;
pub mod rng;
pub mod snapshot;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
