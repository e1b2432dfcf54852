//! Comparison parsers: a layered slot tagger and a pointer-generator
//! sequence-to-sequence model over bracket symbols.

pub mod linearize;
pub mod nlm;
pub mod seq2seq;

pub use linearize::{delinearize, linearize_tree, LinearizeError, Symbol};
pub use nlm::{depth_targets, trim_stack, Nlm, NlmConfig};
pub use seq2seq::{Seq2Seq, Seq2SeqConfig};
