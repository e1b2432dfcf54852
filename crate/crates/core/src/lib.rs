//! Decomposed task-oriented semantic parsing.
//!
//! Hierarchical intent/slot trees are flattened into a coarse intent, one
//! fine-grained intent tag per token and one stack of slot tags per token.
//! The models in this crate predict those layers without autoregression:
//! a fertility head decides how many slot labels each token carries, the
//! token states are copied that many times and a slot encoder labels the
//! copies in one pass.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints,
//! wall-clock timing and the command line live in the companion `x2parser`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod corpus;
pub mod decomposer;
pub mod harness;
pub mod model;
pub mod neural;
pub mod treebank;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
