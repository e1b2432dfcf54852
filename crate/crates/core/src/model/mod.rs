//! Parsers built on the neural toolkit: the fertility-based X2Parser and the
//! pieces it shares with the baselines.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Vocab, Vocabs, CLS, PAD};
use crate::decomposer::{DecomposedFrame, DecomposerError, IntentTag};
use crate::neural::{Encoder, EncoderCache, EncoderConfig, Linear, LinearCache, Module, NeuralError, Param, Scalar, Tensor};
use crate::treebank::{SemanticTree, TreebankError};

mod x2parser;

pub use x2parser::{copy_hiddens, SlotEncoderConfig, X2Parser, X2ParserConfig, X2ParserOutputs};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Decomposer(#[from] DecomposerError),
    #[error(transparent)]
    Treebank(#[from] TreebankError),
    #[error("empty input")]
    EmptyInput,
    #[error("symbol {0:?} is not in the model vocabulary")]
    UnknownSymbol(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Which parser architecture a checkpoint or run refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    X2Parser,
    Nlm,
    Seq2Seq,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::X2Parser, ModelFamily::Nlm, ModelFamily::Seq2Seq];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::X2Parser => "x2parser",
            ModelFamily::Nlm => "nlm",
            ModelFamily::Seq2Seq => "seq2seq",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or(ModelError::InvalidConfig("model family must be x2parser, nlm or seq2seq"))
    }
}

/// Multipliers of the task losses. All default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub coarse: f64,
    pub intent: f64,
    pub fertility: f64,
    pub slot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { coarse: 1.0, intent: 1.0, fertility: 1.0, slot: 1.0 }
    }
}

/// Per-task loss values of one example. Heads a family lacks stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub coarse: f64,
    pub intent: f64,
    pub fertility: f64,
    pub slot: f64,
    pub total: f64,
}

/// Fixed shapes to pad every inference call to, so the work per model
/// application does not depend on the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceShape {
    /// Encoder positions, excluding the `[CLS]` slot.
    pub tokens: usize,
    /// Slot-encoder positions after copying.
    pub slots: usize,
}

/// Decoding result. `frame` is `None` when the model produced something
/// that cannot be read as a frame; `steps` counts sequential model
/// applications.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub frame: Option<DecomposedFrame>,
    pub tree: Option<SemanticTree>,
    pub steps: usize,
    pub failure: Option<String>,
}

impl Prediction {
    pub(crate) fn failed(steps: usize, failure: impl fmt::Display) -> Self {
        Self { frame: None, tree: None, steps, failure: Some(alloc::format!("{failure}")) }
    }
}

/// Interface the training harness drives.
pub trait Parser<F: Scalar>: Module<F> {
    fn family(&self) -> ModelFamily;

    fn vocabs(&self) -> &Vocabs;

    /// Forward and backward pass on one example; gradients are added to the
    /// parameters' accumulators.
    fn accumulate(&mut self, example: &Example, rng: Option<&mut dyn RngCore>) -> Result<LossParts, ModelError>;

    /// Forward pass only.
    fn loss(&self, example: &Example) -> Result<LossParts, ModelError>;

    /// Greedy decoding of a token sequence. Never fails; problems are
    /// reported inside the [`Prediction`].
    fn predict(&self, tokens: &[&str], shape: Option<&InferenceShape>) -> Prediction;
}

/// Encoder plus the coarse and fine-grained intent heads shared by X2Parser
/// and the layered baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<F> {
    pub encoder: Encoder<F>,
    pub coarse_head: Linear<F>,
    pub intent_head: Linear<F>,
}

/// Encoder output for one utterance.
pub(crate) struct Encoded<F> {
    /// `[CLS]` state followed by one state per token (padding rows, if any,
    /// come after).
    pub hidden: Tensor<F>,
    pub cache: EncoderCache<F>,
    pub n: usize,
}

pub(crate) struct IntentHeads<F> {
    pub coarse_logits: Tensor<F>,
    pub intent_logits: Tensor<F>,
    coarse: LinearCache<F>,
    intent: LinearCache<F>,
}

impl<F: Scalar> Backbone<F> {
    pub fn new<R: Rng>(config: &EncoderConfig, vocabs: &Vocabs, rng: &mut R) -> Result<Self, ModelError> {
        let d = config.dim;
        Ok(Self {
            encoder: Encoder::new("encoder", config, rng)?,
            coarse_head: Linear::new("coarse_head", d, vocabs.coarse.len(), rng),
            intent_head: Linear::new("intent_head", d, vocabs.intent_tags.len(), rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.coarse_head.fan_in()
    }

    /// Encodes `[CLS]` followed by the tokens, optionally padded to
    /// `pad_tokens` token positions.
    pub(crate) fn encode<S: AsRef<str>>(
        &self,
        vocab: &Vocab,
        tokens: &[S],
        pad_tokens: Option<usize>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Encoded<F>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let n = tokens.len();
        let mut ids: Vec<usize> = core::iter::once(CLS).chain(tokens.iter().map(|t| vocab.get(t.as_ref()))).collect();
        let width = pad_tokens.map_or(n, |p| p.max(n));
        let (hidden, cache) = if width > n {
            ids.resize(width + 1, PAD);
            let mask: Vec<bool> = (0..=width).map(|i| i <= n).collect();
            self.encoder.forward(&ids, Some(&mask), rng)?
        } else {
            self.encoder.forward(&ids, None, rng)?
        };
        Ok(Encoded { hidden, cache, n })
    }

    pub(crate) fn intent_heads(&self, enc: &Encoded<F>) -> Result<IntentHeads<F>, ModelError> {
        let (coarse_logits, coarse) = self.coarse_head.forward(&enc.hidden.gather_rows(&[0]))?;
        let (intent_logits, intent) = self.intent_head.forward(&token_rows(enc))?;
        Ok(IntentHeads { coarse_logits, intent_logits, coarse, intent })
    }

    /// Backpropagates head gradients into `dhidden` (same shape as the
    /// encoder output).
    pub(crate) fn intent_backward(
        &mut self,
        heads: &IntentHeads<F>,
        dcoarse: &Tensor<F>,
        dintent: &Tensor<F>,
        dhidden: &mut Tensor<F>,
        n: usize,
    ) {
        let dcls = self.coarse_head.backward(&heads.coarse, dcoarse);
        dhidden.scatter_add_rows(&[0], &dcls);
        let dh = self.intent_head.backward(&heads.intent, dintent);
        dhidden.scatter_add_rows(&token_indices(n), &dh);
    }

    /// Coarse label and per-token intent tags by argmax, skipping the
    /// reserved vocabulary entries.
    pub(crate) fn decode_intents(&self, vocabs: &Vocabs, heads: &IntentHeads<F>) -> (String, Vec<IntentTag>) {
        let coarse = vocabs.coarse.symbol(argmax_symbol(heads.coarse_logits.row(0))).into();
        let tags = (0..heads.intent_logits.rows())
            .map(|i| {
                let sym = vocabs.intent_tags.symbol(argmax_symbol(heads.intent_logits.row(i)));
                sym.parse().unwrap_or(IntentTag::O)
            })
            .collect();
        (coarse, tags)
    }
}

impl<F: Scalar> Module<F> for Backbone<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.encoder.visit(f);
        self.coarse_head.visit(f);
        self.intent_head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.encoder.visit_mut(f);
        self.coarse_head.visit_mut(f);
        self.intent_head.visit_mut(f);
    }
}

/// Rows `1..=n` of the encoder output: one per real token.
pub(crate) fn token_indices(n: usize) -> Vec<usize> {
    (1..=n).collect()
}

pub(crate) fn token_rows<F: Scalar>(enc: &Encoded<F>) -> Tensor<F> {
    enc.hidden.gather_rows(&token_indices(enc.n))
}

/// Number of reserved entries at the start of every [`Vocab`].
pub(crate) const RESERVED: usize = 3;

/// Argmax over a vocabulary-sized row, ignoring the reserved entries unless
/// nothing else exists.
pub(crate) fn argmax_symbol<F: Scalar>(row: &[F]) -> usize {
    let start = if row.len() > RESERVED { RESERVED } else { 0 };
    let mut best = start;
    for j in start..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

/// Gold class indices of the shared heads.
pub(crate) struct IntentTargets {
    pub coarse: usize,
    pub intents: Vec<usize>,
}

impl IntentTargets {
    pub fn new(vocabs: &Vocabs, frame: &DecomposedFrame) -> Self {
        Self {
            coarse: vocabs.coarse.get(&frame.coarse_intent),
            intents: frame.intent_tags.iter().map(|t| vocabs.intent_tags.get(&alloc::string::ToString::to_string(t))).collect(),
        }
    }
}

pub(crate) fn weighted<F: Scalar>(grad: &mut Tensor<F>, w: f64) {
    if w != 1.0 {
        grad.scale(F::from_f64(w));
    }
}
