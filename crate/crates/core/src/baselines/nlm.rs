use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Vocabs};
use crate::decomposer::{repair, DecomposedFrame, SlotStack, SlotTag, MAX_FERTILITY as MAX_SLOT_DEPTH};
use crate::model::{
    argmax_symbol, token_indices, token_rows, weighted, Backbone, Encoded, InferenceShape, IntentHeads, IntentTargets,
    LossParts, LossWeights, ModelError, ModelFamily, Parser, Prediction,
};
use crate::neural::{
    cross_entropy, reborrow, EncoderConfig, Linear, LinearCache, Module, Param, Scalar, StackCache, Tensor,
    TransformerStack,
};

/// Layered slot tagger: one transformer layer and classifier per slot depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlmConfig {
    pub encoder: EncoderConfig,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub loss_weights: LossWeights,
    pub repair: bool,
}

impl Default for NlmConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            layers: MAX_SLOT_DEPTH,
            heads: 4,
            ff_dim: 64,
            loss_weights: LossWeights::default(),
            repair: false,
        }
    }
}

impl NlmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers != MAX_SLOT_DEPTH {
            return Err(ModelError::InvalidConfig("layer count must equal the maximum slot depth"));
        }
        if self.heads == 0 || self.ff_dim == 0 || self.encoder.dim % self.heads != 0 {
            return Err(ModelError::InvalidConfig("layer heads must divide the encoder dimension"));
        }
        Ok(())
    }
}

/// Gold tag at each depth: the stack element, or `O` past the stack's end.
pub fn depth_targets(frame: &DecomposedFrame, depth: usize) -> Vec<SlotTag> {
    frame.slot_stacks.iter().map(|s| s.0.get(depth).cloned().unwrap_or(SlotTag::O)).collect()
}

/// Stack from per-depth tags: trailing `O`s dropped, `[O]` if nothing is
/// left.
pub fn trim_stack(tags: &[SlotTag]) -> SlotStack {
    let keep = tags.iter().rposition(|t| *t != SlotTag::O).map_or(0, |i| i + 1);
    if keep == 0 {
        SlotStack::outside()
    } else {
        SlotStack(tags[..keep].to_vec())
    }
}

/// Shares the backbone with X2Parser; slots come from stacked per-depth
/// taggers, where depth `j > 1` reads depth `j - 1`'s states.
#[derive(Debug, Clone, PartialEq)]
pub struct Nlm<F> {
    config: NlmConfig,
    vocabs: Vocabs,
    pub backbone: Backbone<F>,
    pub layers: Vec<TransformerStack<F>>,
    pub classifiers: Vec<Linear<F>>,
}

struct Trace<F> {
    enc: Encoded<F>,
    heads: IntentHeads<F>,
    layers: Vec<StackCache<F>>,
    classifiers: Vec<LinearCache<F>>,
    dcoarse: Tensor<F>,
    dintent: Tensor<F>,
    dslots: Vec<Tensor<F>>,
}

impl<F: Scalar> Nlm<F> {
    /// An encoder vocabulary size of 0 is filled in from `vocabs`.
    pub fn new(mut config: NlmConfig, vocabs: Vocabs) -> Result<Self, ModelError> {
        if config.encoder.vocab_size == 0 {
            config.encoder.vocab_size = vocabs.tokens.len();
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.encoder.seed);
        let backbone = Backbone::new(&config.encoder, &vocabs, &mut rng)?;
        let d = config.encoder.dim;
        let mut layers = Vec::with_capacity(config.layers);
        let mut classifiers = Vec::with_capacity(config.layers);
        for j in 0..config.layers {
            layers.push(TransformerStack::new(
                &format!("slot_layer{j}"),
                d,
                config.heads,
                1,
                config.ff_dim,
                config.encoder.dropout,
                &mut rng,
            )?);
            classifiers.push(Linear::new(&format!("slot_classifier{j}"), d, vocabs.slot_tags.len(), &mut rng));
        }
        Ok(Self { config, vocabs, backbone, layers, classifiers })
    }

    pub fn config(&self) -> &NlmConfig {
        &self.config
    }

    /// Per-depth slot logits for token states `h`.
    pub fn slot_predict(&self, h: &Tensor<F>) -> Result<Vec<Tensor<F>>, ModelError> {
        Ok(self.slot_forward(h, None, None)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn slot_forward(
        &self,
        h: &Tensor<F>,
        mask: Option<&[bool]>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<Tensor<F>>, Vec<StackCache<F>>, Vec<LinearCache<F>>), ModelError> {
        let mut x = h.clone();
        let (mut logits, mut stacks, mut heads) = (Vec::new(), Vec::new(), Vec::new());
        for (layer, classifier) in self.layers.iter().zip(&self.classifiers) {
            let (y, sc) = layer.forward(&x, mask, false, reborrow(&mut rng))?;
            let (l, hc) = classifier.forward(&y)?;
            logits.push(l);
            stacks.push(sc);
            heads.push(hc);
            x = y;
        }
        Ok((logits, stacks, heads))
    }

    fn run(&self, example: &Example, mut rng: Option<&mut dyn RngCore>) -> Result<(LossParts, Trace<F>), ModelError> {
        let frame = example.frame();
        let targets = IntentTargets::new(&self.vocabs, frame);
        let enc = self.backbone.encode(&self.vocabs.tokens, &example.tokens(), None, reborrow(&mut rng))?;
        let heads = self.backbone.intent_heads(&enc)?;
        let (logits, layers, classifiers) = self.slot_forward(&token_rows(&enc), None, reborrow(&mut rng))?;
        let w = self.config.loss_weights;
        let (lc, mut dcoarse) = cross_entropy(&heads.coarse_logits, &[targets.coarse], None)?;
        let (li, mut dintent) = cross_entropy(&heads.intent_logits, &targets.intents, None)?;
        weighted(&mut dcoarse, w.coarse);
        weighted(&mut dintent, w.intent);
        let mut slot_loss = 0.0;
        let mut dslots = Vec::with_capacity(logits.len());
        for (depth, l) in logits.iter().enumerate() {
            let gold: Vec<usize> = depth_targets(frame, depth)
                .iter()
                .map(|t| self.vocabs.slot_tags.get(&t.to_string()))
                .collect();
            let (ls, mut g) = cross_entropy(l, &gold, None)?;
            weighted(&mut g, w.slot);
            slot_loss += ls.as_f64();
            dslots.push(g);
        }
        let (lc, li) = (lc.as_f64(), li.as_f64());
        let parts = LossParts {
            coarse: lc,
            intent: li,
            fertility: 0.0,
            slot: slot_loss,
            total: w.coarse * lc + w.intent * li + w.slot * slot_loss,
        };
        Ok((parts, Trace { enc, heads, layers, classifiers, dcoarse, dintent, dslots }))
    }

    fn backward(&mut self, t: Trace<F>) {
        let n = t.enc.n;
        let mut dh = Tensor::zeros(t.enc.hidden.shape());
        self.backbone.intent_backward(&t.heads, &t.dcoarse, &t.dintent, &mut dh, n);
        // walk the stack top-down; `carry` is the gradient flowing into the
        // output of the current layer from the layer above
        let mut carry: Option<Tensor<F>> = None;
        for j in (0..self.layers.len()).rev() {
            let mut dy = self.classifiers[j].backward(&t.classifiers[j], &t.dslots[j]);
            if let Some(c) = &carry {
                dy.add_assign(c);
            }
            carry = Some(self.layers[j].backward(&t.layers[j], &dy));
        }
        if let Some(dtok) = carry {
            dh.scatter_add_rows(&token_indices(n), &dtok);
        }
        self.backbone.encoder.backward(&t.enc.cache, &dh);
    }
}

impl<F: Scalar> Parser<F> for Nlm<F> {
    fn family(&self) -> ModelFamily {
        ModelFamily::Nlm
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

    /// One application for the encoder and intent heads, then one per
    /// stacked layer, since each depth waits for the one below.
    fn predict(&self, tokens: &[&str], shape: Option<&InferenceShape>) -> Prediction {
        let enc = match self.backbone.encode(&self.vocabs.tokens, tokens, shape.map(|s| s.tokens), None) {
            Ok(e) => e,
            Err(e) => return Prediction::failed(0, e),
        };
        let heads = match self.backbone.intent_heads(&enc) {
            Ok(h) => h,
            Err(e) => return Prediction::failed(0, e),
        };
        let (coarse_intent, intent_tags) = self.backbone.decode_intents(&self.vocabs, &heads);
        // keep padded rows so every layer runs at the fixed width
        let width = enc.hidden.rows() - 1;
        let h = enc.hidden.gather_rows(&token_indices(width));
        let mask: Option<Vec<bool>> = (width > enc.n).then(|| (0..width).map(|i| i < enc.n).collect());
        let logits = match self.slot_forward(&h, mask.as_deref(), None) {
            Ok((l, _, _)) => l,
            Err(e) => return Prediction::failed(1, e),
        };
        let steps = 1 + logits.len();
        let slot_stacks = (0..enc.n)
            .map(|i| {
                let tags: Vec<SlotTag> = logits
                    .iter()
                    .map(|l| self.vocabs.slot_tags.symbol(argmax_symbol(l.row(i))).parse().unwrap_or(SlotTag::O))
                    .collect();
                trim_stack(&tags)
            })
            .collect();
        let frame = DecomposedFrame { coarse_intent, intent_tags, slot_stacks };
        let frame = if self.config.repair { repair(&frame) } else { frame };
        Prediction { frame: Some(frame), tree: None, steps, failure: None }
    }
}

impl<F: Scalar> Module<F> for Nlm<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.backbone.visit(f);
        for (l, c) in self.layers.iter().zip(&self.classifiers) {
            l.visit(f);
            c.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.backbone.visit_mut(f);
        for (l, c) in self.layers.iter_mut().zip(&mut self.classifiers) {
            l.visit_mut(f);
            c.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn trailing_outside_tags_are_trimmed() {
        let a = SlotTag::B("A".into());
        assert_eq!(trim_stack(&[a.clone(), SlotTag::O, SlotTag::O]), SlotStack(vec![a]));
        assert_eq!(trim_stack(&[SlotTag::O, SlotTag::O, SlotTag::O]), SlotStack::outside());
    }
}
