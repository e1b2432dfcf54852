//! Model-agnostic training, evaluation and the few-shot protocol.
//!
//! Everything here is deterministic and free of IO; wall-clock timing and
//! file output live in the companion crate.

use alloc::string::String;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::baselines::{linearize_tree, Nlm, NlmConfig, Seq2Seq, Seq2SeqConfig};
use crate::corpus::{CorpusError, Dataset, Example, Vocabs};
use crate::model::{
    InferenceShape, LossParts, ModelError, ModelFamily, Parser, Prediction, SlotEncoderConfig, X2Parser,
    X2ParserConfig,
};
use crate::neural::{EncoderConfig, Module, Param, Scalar};

mod eval;
mod fewshot;
mod train;

pub use eval::{evaluate, evaluate_predictions, DomainScore, EvalReport};
pub use fewshot::{
    run_few_shot_protocol, FewShotCell, FewShotConfig, FewShotReport, FewShotRow, Learner, ParserLearner, SplitCheck,
};
pub use train::{train, EpochLog, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("non-finite loss at epoch {epoch} on example `{id}`")]
    NonFiniteLoss { epoch: usize, id: String },
    #[error("invalid harness configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Architecture of any of the three parser families, tagged by family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    X2Parser(X2ParserConfig),
    Nlm(NlmConfig),
    Seq2Seq(Seq2SeqConfig),
}

impl ModelConfig {
    /// Small configuration for CPU runs: a 2-layer, 64-dimensional,
    /// 4-head encoder shared by all families; the slot encoder runs at the
    /// encoder dimension.
    pub fn desk(family: ModelFamily) -> Self {
        let encoder = EncoderConfig { dim: 64, heads: 4, layers: 2, ff_dim: 128, ..EncoderConfig::default() };
        match family {
            ModelFamily::X2Parser => ModelConfig::X2Parser(X2ParserConfig {
                encoder,
                slot_encoder: SlotEncoderConfig { dim: 64, heads: 4, layers: 1, ff_dim: 64 },
                ..X2ParserConfig::default()
            }),
            ModelFamily::Nlm => ModelConfig::Nlm(NlmConfig { encoder, ..NlmConfig::default() }),
            ModelFamily::Seq2Seq => ModelConfig::Seq2Seq(Seq2SeqConfig {
                decoder_layers: encoder.layers,
                decoder_heads: encoder.heads,
                decoder_ff_dim: encoder.ff_dim,
                encoder,
                ..Seq2SeqConfig::default()
            }),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            ModelConfig::X2Parser(_) => ModelFamily::X2Parser,
            ModelConfig::Nlm(_) => ModelFamily::Nlm,
            ModelConfig::Seq2Seq(_) => ModelFamily::Seq2Seq,
        }
    }

    pub fn encoder(&self) -> &EncoderConfig {
        match self {
            ModelConfig::X2Parser(c) => &c.encoder,
            ModelConfig::Nlm(c) => &c.encoder,
            ModelConfig::Seq2Seq(c) => &c.encoder,
        }
    }

    pub fn encoder_mut(&mut self) -> &mut EncoderConfig {
        match self {
            ModelConfig::X2Parser(c) => &mut c.encoder,
            ModelConfig::Nlm(c) => &mut c.encoder,
            ModelConfig::Seq2Seq(c) => &mut c.encoder,
        }
    }

    /// Grows the length limits so every example of `dataset` fits: the
    /// encoder must hold `[CLS]` plus the longest utterance and the decoder
    /// the longest linearized tree.
    pub fn fit_lengths(&mut self, dataset: &Dataset) {
        let longest = dataset.iter().map(|e| e.tree().len()).max().unwrap_or(0);
        let enc = self.encoder_mut();
        enc.max_len = enc.max_len.max(longest + 1);
        if let ModelConfig::Seq2Seq(c) = self {
            let symbols = dataset.iter().map(|e| linearize_tree(e.tree()).len()).max().unwrap_or(0);
            c.max_decode_len = c.max_decode_len.max(symbols);
        }
    }

    pub fn build<F: Scalar>(&self, vocabs: Vocabs) -> Result<AnyParser<F>, ModelError> {
        Ok(match self {
            ModelConfig::X2Parser(c) => AnyParser::X2Parser(X2Parser::new(c.clone(), vocabs)?),
            ModelConfig::Nlm(c) => AnyParser::Nlm(Nlm::new(c.clone(), vocabs)?),
            ModelConfig::Seq2Seq(c) => AnyParser::Seq2Seq(Seq2Seq::new(c.clone(), vocabs)?),
        })
    }
}

/// A parser of any family behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyParser<F> {
    X2Parser(X2Parser<F>),
    Nlm(Nlm<F>),
    Seq2Seq(Seq2Seq<F>),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyParser::X2Parser($m) => $body,
            AnyParser::Nlm($m) => $body,
            AnyParser::Seq2Seq($m) => $body,
        }
    };
}

impl<F: Scalar> AnyParser<F> {
    pub fn config(&self) -> ModelConfig {
        match self {
            AnyParser::X2Parser(m) => ModelConfig::X2Parser(m.config().clone()),
            AnyParser::Nlm(m) => ModelConfig::Nlm(m.config().clone()),
            AnyParser::Seq2Seq(m) => ModelConfig::Seq2Seq(m.config().clone()),
        }
    }

    /// Like [`Parser::predict`], but the sequence-to-sequence model emits
    /// exactly `symbols` symbols. The other families ignore `symbols`.
    pub fn predict_forced(&self, tokens: &[&str], symbols: usize, shape: Option<&InferenceShape>) -> Prediction {
        match self {
            AnyParser::Seq2Seq(m) => m.predict_forced(tokens, symbols, shape),
            other => other.predict(tokens, shape),
        }
    }
}

impl<F: Scalar> Parser<F> for AnyParser<F> {
    fn family(&self) -> ModelFamily {
        dispatch!(self, m => m.family())
    }

    fn vocabs(&self) -> &Vocabs {
        dispatch!(self, m => m.vocabs())
    }

    fn accumulate(&mut self, example: &Example, rng: Option<&mut dyn RngCore>) -> Result<LossParts, ModelError> {
        dispatch!(self, m => m.accumulate(example, rng))
    }

    fn loss(&self, example: &Example) -> Result<LossParts, ModelError> {
        dispatch!(self, m => m.loss(example))
    }

    fn predict(&self, tokens: &[&str], shape: Option<&InferenceShape>) -> Prediction {
        dispatch!(self, m => m.predict(tokens, shape))
    }
}

impl<F: Scalar> Module<F> for AnyParser<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        dispatch!(self, m => m.visit(f))
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        dispatch!(self, m => m.visit_mut(f))
    }
}
