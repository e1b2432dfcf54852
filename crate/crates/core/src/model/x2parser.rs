use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    token_indices, token_rows, weighted, Backbone, Encoded, InferenceShape, IntentHeads, IntentTargets, LossParts,
    LossWeights, ModelError, ModelFamily, Parser, Prediction,
};
use crate::corpus::{Example, Vocabs};
use crate::decomposer::{
    fertility_of, flatten_slot_targets, regroup_slots, repair, DecomposedFrame, DecomposerError, SlotTag, MAX_FERTILITY,
};
use crate::neural::{
    cross_entropy, reborrow, Embedding, EmbeddingCache, EncoderConfig, Linear, LinearCache, Module, NeuralError, Param,
    Scalar, StackCache, Tensor, TransformerStack,
};

/// Transformer that labels the copied token states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlotEncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
}

impl Default for SlotEncoderConfig {
    fn default() -> Self {
        Self { dim: 400, heads: 4, layers: 1, ff_dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct X2ParserConfig {
    pub encoder: EncoderConfig,
    pub max_fertility: usize,
    pub slot_encoder: SlotEncoderConfig,
    pub loss_weights: LossWeights,
    /// Apply BIO repair to decoded frames.
    pub repair: bool,
}

impl Default for X2ParserConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            max_fertility: MAX_FERTILITY,
            slot_encoder: SlotEncoderConfig::default(),
            loss_weights: LossWeights::default(),
            repair: false,
        }
    }
}

impl X2ParserConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(1..=MAX_FERTILITY).contains(&self.max_fertility) {
            return Err(ModelError::InvalidConfig("max_fertility must lie in 1..=3"));
        }
        let s = &self.slot_encoder;
        if s.dim == 0 || s.heads == 0 || s.layers == 0 || s.ff_dim == 0 || s.dim % s.heads != 0 {
            return Err(ModelError::InvalidConfig("slot encoder counts must be positive and dim divisible by heads"));
        }
        Ok(())
    }

    /// Longest copied sequence the slot encoder accepts.
    pub fn max_slot_len(&self) -> usize {
        self.max_fertility * self.encoder.max_len
    }
}

/// Raw head outputs for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct X2ParserOutputs<F> {
    pub coarse_logits: Tensor<F>,
    pub intent_logits: Tensor<F>,
    pub fertility_logits: Tensor<F>,
    pub slot_logits: Tensor<F>,
}

/// Row indices into an encoder output (`[CLS]` at row 0) that repeat token
/// `i` `fertilities[i]` times.
fn copy_indices(fertilities: &[usize], max: usize) -> Result<Vec<usize>, ModelError> {
    let mut rows = Vec::with_capacity(fertilities.iter().sum());
    for (position, &f) in fertilities.iter().enumerate() {
        if f == 0 || f > max {
            return Err(DecomposerError::FertilityOutOfRange { position, value: f }.into());
        }
        rows.extend(core::iter::repeat(position + 1).take(f));
    }
    Ok(rows)
}

/// Repeats row `i` of `h` `fertilities[i]` times, keeping order.
pub fn copy_hiddens<F: Scalar>(h: &Tensor<F>, fertilities: &[usize]) -> Result<Tensor<F>, ModelError> {
    if fertilities.len() != h.rows() {
        return Err(NeuralError::ShapeMismatch { expected: alloc::vec![fertilities.len()], found: h.shape().to_vec() }.into());
    }
    let rows: Vec<usize> = copy_indices(fertilities, MAX_FERTILITY)?.into_iter().map(|r| r - 1).collect();
    Ok(h.gather_rows(&rows))
}

/// Encoder, intent heads, fertility classifier and slot encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct X2Parser<F> {
    config: X2ParserConfig,
    vocabs: Vocabs,
    pub backbone: Backbone<F>,
    pub fertility_head: Linear<F>,
    pub slot_projection: Option<Linear<F>>,
    pub slot_positions: Embedding<F>,
    pub slot_encoder: TransformerStack<F>,
    pub slot_head: Linear<F>,
}

struct SlotBranch<F> {
    logits: Tensor<F>,
    projection: Option<LinearCache<F>>,
    positions: EmbeddingCache,
    stack: StackCache<F>,
    head: LinearCache<F>,
}

struct Trace<F> {
    enc: Encoded<F>,
    heads: IntentHeads<F>,
    fertility: LinearCache<F>,
    copy: Vec<usize>,
    slots: SlotBranch<F>,
    dcoarse: Tensor<F>,
    dintent: Tensor<F>,
    dfertility: Tensor<F>,
    dslot: Tensor<F>,
}

impl<F: Scalar> X2Parser<F> {
    /// An encoder vocabulary size of 0 is filled in from `vocabs`.
    pub fn new(mut config: X2ParserConfig, vocabs: Vocabs) -> Result<Self, ModelError> {
        if config.encoder.vocab_size == 0 {
            config.encoder.vocab_size = vocabs.tokens.len();
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.encoder.seed);
        let backbone = Backbone::new(&config.encoder, &vocabs, &mut rng)?;
        let d = config.encoder.dim;
        let s = &config.slot_encoder;
        let fertility_head = Linear::new("fertility_head", d, config.max_fertility, &mut rng);
        let slot_projection = (s.dim != d).then(|| Linear::new("slot_projection", d, s.dim, &mut rng));
        let slot_positions = Embedding::new("slot_positions", config.max_slot_len(), s.dim, &mut rng);
        let slot_encoder =
            TransformerStack::new("slot_encoder", s.dim, s.heads, s.layers, s.ff_dim, config.encoder.dropout, &mut rng)?;
        let slot_head = Linear::new("slot_head", s.dim, vocabs.slot_tags.len(), &mut rng);
        Ok(Self { config, vocabs, backbone, fertility_head, slot_projection, slot_positions, slot_encoder, slot_head })
    }

    pub fn config(&self) -> &X2ParserConfig {
        &self.config
    }

    /// `[CLS]` state and one state per token.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<(Tensor<F>, Tensor<F>), ModelError> {
        let enc = self.backbone.encode(&self.vocabs.tokens, tokens, None, None)?;
        Ok((enc.hidden.gather_rows(&[0]), token_rows(&enc)))
    }

    pub fn predict_fertility(&self, h: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        Ok(self.fertility_head.infer(h)?)
    }

    pub fn coarse_intent(&self, h_cls: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        Ok(self.backbone.coarse_head.infer(h_cls)?)
    }

    pub fn fine_intent(&self, h: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        Ok(self.backbone.intent_head.infer(h)?)
    }

    /// Slot logits for copied states `h_copied`, one row each.
    pub fn slot_filling(&self, h_copied: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        Ok(self.slot_forward(h_copied, None, None)?.logits)
    }

    /// All head outputs. Slot logits use `fertilities` when given and the
    /// predicted fertilities otherwise.
    pub fn forward<S: AsRef<str>>(
        &self,
        tokens: &[S],
        fertilities: Option<&[usize]>,
    ) -> Result<X2ParserOutputs<F>, ModelError> {
        let enc = self.backbone.encode(&self.vocabs.tokens, tokens, None, None)?;
        let heads = self.backbone.intent_heads(&enc)?;
        let fertility_logits = self.fertility_head.infer(&token_rows(&enc))?;
        let predicted;
        let fert = match fertilities {
            Some(f) => f,
            None => {
                predicted = classes_to_fertility(&fertility_logits);
                &predicted
            }
        };
        let copy = copy_indices(fert, self.config.max_fertility)?;
        let slots = self.slot_forward(&enc.hidden.gather_rows(&copy), None, None)?;
        Ok(X2ParserOutputs {
            coarse_logits: heads.coarse_logits,
            intent_logits: heads.intent_logits,
            fertility_logits,
            slot_logits: slots.logits,
        })
    }

    /// Decoded frame; see [`Parser::predict`] for the step count.
    pub fn greedy_decode<S: AsRef<str>>(&self, tokens: &[S]) -> DecomposedFrame {
        let refs: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        self.predict(&refs, None).frame.unwrap_or_else(|| DecomposedFrame {
            coarse_intent: self.vocabs.coarse.symbol(0).to_string(),
            intent_tags: Vec::new(),
            slot_stacks: Vec::new(),
        })
    }

    fn slot_forward(
        &self,
        copied: &Tensor<F>,
        pad_to: Option<usize>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<SlotBranch<F>, ModelError> {
        let m = copied.rows();
        let width = pad_to.map_or(m, |p| p.max(m));
        let cap = self.slot_positions.vocab_size();
        if width > cap {
            return Err(NeuralError::SequenceTooLong { len: width, max: cap }.into());
        }
        let (mut z, projection) = match &self.slot_projection {
            Some(p) => {
                let (z, c) = p.forward(copied)?;
                (z, Some(c))
            }
            None => (copied.clone(), None),
        };
        if width > m {
            let mut padded = Tensor::zeros(&[width, z.cols()]);
            padded.data_mut()[..z.len()].copy_from_slice(z.data());
            z = padded;
        }
        let pos: Vec<usize> = (0..width).collect();
        let (p, positions) = self.slot_positions.forward(&pos)?;
        z.add_assign(&p);
        let mask: Option<Vec<bool>> = (width > m).then(|| (0..width).map(|i| i < m).collect());
        let (s, stack) = self.slot_encoder.forward(&z, mask.as_deref(), false, reborrow(&mut rng))?;
        let s = if width > m { s.gather_rows(&(0..m).collect::<Vec<_>>()) } else { s };
        let (logits, head) = self.slot_head.forward(&s)?;
        Ok(SlotBranch { logits, projection, positions, stack, head })
    }

    fn slot_backward(&mut self, branch: &SlotBranch<F>, dlogits: &Tensor<F>) -> Tensor<F> {
        let ds = self.slot_head.backward(&branch.head, dlogits);
        let dz = self.slot_encoder.backward(&branch.stack, &ds);
        self.slot_positions.backward(&branch.positions, &dz);
        match (&mut self.slot_projection, &branch.projection) {
            (Some(p), Some(c)) => p.backward(c, &dz),
            _ => dz,
        }
    }

    fn run(&self, example: &Example, mut rng: Option<&mut dyn RngCore>) -> Result<(LossParts, Trace<F>), ModelError> {
        let frame = example.frame();
        let tokens = example.tokens();
        let targets = IntentTargets::new(&self.vocabs, frame);
        let fert = fertility_of(frame);
        let fert_classes: Vec<usize> = fert.iter().map(|f| f.saturating_sub(1)).collect();
        let slot_targets: Vec<usize> =
            flatten_slot_targets(frame).iter().map(|t| self.vocabs.slot_tags.get(&t.to_string())).collect();

        let enc = self.backbone.encode(&self.vocabs.tokens, &tokens, None, reborrow(&mut rng))?;
        let heads = self.backbone.intent_heads(&enc)?;
        let (fertility_logits, fertility) = self.fertility_head.forward(&token_rows(&enc))?;
        let copy = copy_indices(&fert, self.config.max_fertility)?;
        let slots = self.slot_forward(&enc.hidden.gather_rows(&copy), None, reborrow(&mut rng))?;

        let w = self.config.loss_weights;
        let (lc, mut dcoarse) = cross_entropy(&heads.coarse_logits, &[targets.coarse], None)?;
        let (li, mut dintent) = cross_entropy(&heads.intent_logits, &targets.intents, None)?;
        let (lf, mut dfertility) = cross_entropy(&fertility_logits, &fert_classes, None)?;
        let (ls, mut dslot) = cross_entropy(&slots.logits, &slot_targets, None)?;
        weighted(&mut dcoarse, w.coarse);
        weighted(&mut dintent, w.intent);
        weighted(&mut dfertility, w.fertility);
        weighted(&mut dslot, w.slot);
        let (lc, li, lf, ls) = (lc.as_f64(), li.as_f64(), lf.as_f64(), ls.as_f64());
        let parts = LossParts {
            coarse: lc,
            intent: li,
            fertility: lf,
            slot: ls,
            total: w.coarse * lc + w.intent * li + w.fertility * lf + w.slot * ls,
        };
        Ok((parts, Trace { enc, heads, fertility, copy, slots, dcoarse, dintent, dfertility, dslot }))
    }

    fn backward(&mut self, t: Trace<F>) {
        let n = t.enc.n;
        let mut dh = Tensor::zeros(t.enc.hidden.shape());
        self.backbone.intent_backward(&t.heads, &t.dcoarse, &t.dintent, &mut dh, n);
        let dtok = self.fertility_head.backward(&t.fertility, &t.dfertility);
        dh.scatter_add_rows(&token_indices(n), &dtok);
        let dcopy = self.slot_backward(&t.slots, &t.dslot);
        dh.scatter_add_rows(&t.copy, &dcopy);
        self.backbone.encoder.backward(&t.enc.cache, &dh);
    }

    fn decode(&self, tokens: &[&str], shape: Option<&InferenceShape>) -> Result<(DecomposedFrame, usize), (usize, ModelError)> {
        let mut steps = 0;
        let fail = |steps: usize| move |e: ModelError| (steps, e);
        // first application: encoder and the three token-level heads
        let enc = self.backbone.encode(&self.vocabs.tokens, tokens, shape.map(|s| s.tokens), None).map_err(fail(steps))?;
        let heads = self.backbone.intent_heads(&enc).map_err(fail(steps))?;
        let fert_logits = self.predict_fertility(&token_rows(&enc)).map_err(fail(steps))?;
        let fert = classes_to_fertility(&fert_logits);
        steps += 1;
        let (coarse_intent, intent_tags) = self.backbone.decode_intents(&self.vocabs, &heads);
        // second application: slot encoder over the copied states
        let copy = copy_indices(&fert, self.config.max_fertility).map_err(fail(steps))?;
        let slots = self.slot_forward(&enc.hidden.gather_rows(&copy), shape.map(|s| s.slots), None).map_err(fail(steps))?;
        steps += 1;
        let tags: Vec<SlotTag> = (0..slots.logits.rows())
            .map(|i| {
                let sym = self.vocabs.slot_tags.symbol(super::argmax_symbol(slots.logits.row(i)));
                sym.parse().unwrap_or(SlotTag::O)
            })
            .collect();
        let slot_stacks = regroup_slots(&tags, &fert).map_err(|e| fail(steps)(e.into()))?;
        let frame = DecomposedFrame { coarse_intent, intent_tags, slot_stacks };
        Ok((if self.config.repair { repair(&frame) } else { frame }, steps))
    }
}

fn classes_to_fertility<F: Scalar>(logits: &Tensor<F>) -> Vec<usize> {
    logits.argmax_rows().into_iter().map(|k| k + 1).collect()
}

impl<F: Scalar> Parser<F> for X2Parser<F> {
    fn family(&self) -> ModelFamily {
        ModelFamily::X2Parser
    }

    fn vocabs(&self) -> &Vocabs {
        &self.vocabs
    }

    fn accumulate(&mut self, example: &Example, rng: Option<&mut dyn RngCore>) -> Result<LossParts, ModelError> {
        let (parts, trace) = self.run(example, rng)?;
        self.backward(trace);
        Ok(parts)
    }

    fn loss(&self, example: &Example) -> Result<LossParts, ModelError> {
        Ok(self.run(example, None)?.0)
    }

    /// Two sequential applications regardless of length: the encoder with
    /// its heads, then the slot encoder.
    fn predict(&self, tokens: &[&str], shape: Option<&InferenceShape>) -> Prediction {
        match self.decode(tokens, shape) {
            Ok((frame, steps)) => Prediction { frame: Some(frame), tree: None, steps, failure: None },
            Err((steps, e)) => Prediction::failed(steps, e),
        }
    }
}

impl<F: Scalar> Module<F> for X2Parser<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.backbone.visit(f);
        self.fertility_head.visit(f);
        if let Some(p) = &self.slot_projection {
            p.visit(f);
        }
        self.slot_positions.visit(f);
        self.slot_encoder.visit(f);
        self.slot_head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.backbone.visit_mut(f);
        self.fertility_head.visit_mut(f);
        if let Some(p) = &mut self.slot_projection {
            p.visit_mut(f);
        }
        self.slot_positions.visit_mut(f);
        self.slot_encoder.visit_mut(f);
        self.slot_head.visit_mut(f);
    }
}
