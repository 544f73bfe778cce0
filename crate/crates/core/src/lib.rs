//! Imitation learning for abductive explanation generation.
//!
//! A synthetic "uncommon outcome" world replaces natural language: contexts,
//! outcomes and explanations are walks over a weighted symbol graph, so the
//! expert policy and every outcome likelihood are exactly computable. On top
//! of that world the crate provides a small autoregressive learner, a
//! reverse-mode gradient tape, three trainers (behavior cloning, expert as
//! oracle, static expert demonstrations), an automatic pairwise judge and the
//! corpus diversity analyses.

pub mod analysis;
pub mod data;
mod error;
pub mod eval;
pub mod imitation;
pub mod numerics;
pub mod policy;
pub mod seed;
pub mod taskgen;

pub use error::{Error, Result};
