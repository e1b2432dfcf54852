use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linearize::{delinearize, linearize_tree, Symbol};
use crate::corpus::{open_symbol, Example, Vocabs};
use crate::decomposer::decompose;
use crate::model::{InferenceShape, LossParts, ModelError, ModelFamily, Parser, Prediction};
use crate::neural::{
    cross_entropy, dot, gemm_nn, gemm_tn, reborrow, DecoderCache, DecoderStack, Embedding, EmbeddingCache, Encoder,
    EncoderCache, EncoderConfig, Linear, LinearCache, Module, NeuralError, Param, Scalar, Tensor,
};
use crate::corpus::{CLS, PAD};
use crate::treebank::NodeKind;

/// Output classes `0..3` of the generation vocabulary. They reuse the
/// reserved slots of the `opens` table.
pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const CLOSE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seq2SeqConfig {
    pub encoder: EncoderConfig,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub decoder_ff_dim: usize,
    /// Longest symbol sequence, end marker excluded.
    pub max_decode_len: usize,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        Self {
            decoder_layers: encoder.layers,
            decoder_heads: encoder.heads,
            decoder_ff_dim: encoder.ff_dim,
            encoder,
            max_decode_len: 96,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.decoder_layers == 0 || self.decoder_heads == 0 || self.decoder_ff_dim == 0 || self.max_decode_len == 0 {
            return Err(ModelError::InvalidConfig("decoder counts must be positive"));
        }
        if self.encoder.dim % self.decoder_heads != 0 {
            return Err(ModelError::InvalidConfig("decoder heads must divide the model dimension"));
        }
        Ok(())
    }
}

/// Transformer encoder-decoder that emits bracket symbols and points at
/// input positions to copy tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq<F> {
    config: Seq2SeqConfig,
    vocabs: Vocabs,
    pub encoder: Encoder<F>,
    /// Rows `0..G` embed generated symbols, row `G + i` embeds a copy of
    /// position `i`.
    pub targets: Embedding<F>,
    pub positions: Embedding<F>,
    pub decoder: DecoderStack<F>,
    pub generate: Linear<F>,
    pub pointer: Linear<F>,
}

struct Trace<F> {
    enc: EncoderCache<F>,
    memory: Tensor<F>,
    n: usize,
    targets: EmbeddingCache,
    positions: EmbeddingCache,
    decoder: DecoderCache<F>,
    generate: LinearCache<F>,
    pointer: LinearCache<F>,
    query: Tensor<F>,
    dlogits: Tensor<F>,
}

impl<F: Scalar> Seq2Seq<F> {
    /// An encoder vocabulary size of 0 is filled in from `vocabs`.
    pub fn new(mut config: Seq2SeqConfig, vocabs: Vocabs) -> Result<Self, ModelError> {
        if config.encoder.vocab_size == 0 {
            config.encoder.vocab_size = vocabs.tokens.len();
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.encoder.seed);
        let e = &config.encoder;
        let encoder = Encoder::new("encoder", e, &mut rng)?;
        let g = vocabs.opens.len();
        let targets = Embedding::new("targets", g + e.max_len, e.dim, &mut rng);
        let positions = Embedding::new("target_positions", config.max_decode_len + 1, e.dim, &mut rng);
        let decoder = DecoderStack::new(
            "decoder",
            e.dim,
            config.decoder_heads,
            config.decoder_layers,
            config.decoder_ff_dim,
            &mut rng,
        )?;
        let generate = Linear::new("generate", e.dim, g, &mut rng);
        let pointer = Linear::new("pointer", e.dim, e.dim, &mut rng);
        Ok(Self { config, vocabs, encoder, targets, positions, decoder, generate, pointer })
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.config
    }

    fn generated(&self) -> usize {
        self.vocabs.opens.len()
    }

    /// Output class of a symbol: generation index or `G + position`.
    pub fn symbol_class(&self, sym: &Symbol) -> Result<usize, ModelError> {
        match sym {
            Symbol::Close => Ok(CLOSE),
            Symbol::Copy(i) => Ok(self.generated() + i),
            Symbol::Open { kind, label } => {
                let s = open_symbol(*kind, label);
                self.vocabs.opens.lookup(&s).ok_or(ModelError::UnknownSymbol(s))
            }
        }
    }

    fn class_symbol(&self, class: usize) -> Option<Symbol> {
        let g = self.generated();
        match class {
            CLOSE => Some(Symbol::Close),
            c if c >= g => Some(Symbol::Copy(c - g)),
            BOS | EOS => None,
            c => {
                let s = self.vocabs.opens.symbol(c);
                let (kind, label) = if let Some(l) = s.strip_prefix(NodeKind::Intent.prefix()) {
                    (NodeKind::Intent, l)
                } else {
                    (NodeKind::Slot, s.strip_prefix(NodeKind::Slot.prefix())?)
                };
                Some(Symbol::Open { kind, label: label.into() })
            }
        }
    }

    fn encode(
        &self,
        tokens: &[&str],
        pad: Option<usize>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<F>, EncoderCache<F>, Option<Vec<bool>>), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let n = tokens.len();
        let mut ids: Vec<usize> =
            core::iter::once(CLS).chain(tokens.iter().map(|t| self.vocabs.tokens.get(t))).collect();
        let width = pad.map_or(n, |p| p.max(n));
        if width > n {
            ids.resize(width + 1, PAD);
            let mask: Vec<bool> = (0..=width).map(|i| i <= n).collect();
            let (h, c) = self.encoder.forward(&ids, Some(&mask), rng)?;
            Ok((h, c, Some(mask)))
        } else {
            let (h, c) = self.encoder.forward(&ids, None, rng)?;
            Ok((h, c, None))
        }
    }

    /// Concatenates generation logits with pointer scores over the `n` real
    /// tokens (memory rows `1..=n`).
    fn logits(&self, gen: &Tensor<F>, query: &Tensor<F>, memory: &Tensor<F>, n: usize) -> Tensor<F> {
        let g = gen.cols();
        let rows = gen.rows();
        let mut out = Tensor::zeros(&[rows, g + n]);
        for t in 0..rows {
            let r = out.row_mut(t);
            r[..g].copy_from_slice(gen.row(t));
            for j in 0..n {
                r[g + j] = dot(query.row(t), memory.row(j + 1));
            }
        }
        out
    }

    fn run(&self, example: &Example, mut rng: Option<&mut dyn RngCore>) -> Result<(LossParts, Trace<F>), ModelError> {
        let tokens = example.tokens();
        let n = tokens.len();
        let symbols = linearize_tree(example.tree());
        if symbols.len() > self.config.max_decode_len {
            return Err(NeuralError::SequenceTooLong { len: symbols.len(), max: self.config.max_decode_len }.into());
        }
        let classes = symbols.iter().map(|s| self.symbol_class(s)).collect::<Result<Vec<_>, _>>()?;
        let inputs: Vec<usize> = core::iter::once(BOS).chain(classes.iter().copied()).collect();
        let gold: Vec<usize> = classes.iter().copied().chain(core::iter::once(EOS)).collect();

        let (memory, enc, _) = self.encode(&tokens, None, reborrow(&mut rng))?;
        let (mut x, targets) = self.targets.forward(&inputs)?;
        let pos: Vec<usize> = (0..inputs.len()).collect();
        let (p, positions) = self.positions.forward(&pos)?;
        x.add_assign(&p);
        let (out, decoder) = self.decoder.forward(&x, &memory, None)?;
        let (gen, generate) = self.generate.forward(&out)?;
        let (query, pointer) = self.pointer.forward(&out)?;
        let logits = self.logits(&gen, &query, &memory, n);
        let (loss, dlogits) = cross_entropy(&logits, &gold, None)?;
        let l = loss.as_f64();
        let parts = LossParts { slot: l, total: l, ..LossParts::default() };
        Ok((parts, Trace { enc, memory, n, targets, positions, decoder, generate, pointer, query, dlogits }))
    }

    fn backward(&mut self, t: Trace<F>) {
        let g = self.generated();
        let rows = t.dlogits.rows();
        let d = t.memory.cols();
        let n = t.n;
        let mut dgen = Tensor::zeros(&[rows, g]);
        let mut dcopy = Tensor::zeros(&[rows, n]);
        for r in 0..rows {
            dgen.row_mut(r).copy_from_slice(&t.dlogits.row(r)[..g]);
            dcopy.row_mut(r).copy_from_slice(&t.dlogits.row(r)[g..]);
        }
        let tok_rows: Vec<usize> = (1..=n).collect();
        let mem_tokens = t.memory.gather_rows(&tok_rows);
        // query gradient: dcopy · H ; token gradient: dcopyᵀ · query
        let mut dquery = Tensor::zeros(&[rows, d]);
        gemm_nn(dcopy.data(), mem_tokens.data(), dquery.data_mut(), rows, n, d);
        let mut dtokens = Tensor::zeros(&[n, d]);
        gemm_tn(dcopy.data(), t.query.data(), dtokens.data_mut(), n, rows, d);

        let mut dout = self.generate.backward(&t.generate, &dgen);
        dout.add_assign(&self.pointer.backward(&t.pointer, &dquery));
        let (dx, mut dmem) = self.decoder.backward(&t.decoder, &dout, t.memory.shape());
        dmem.scatter_add_rows(&tok_rows, &dtokens);
        self.targets.backward(&t.targets, &dx);
        self.positions.backward(&t.positions, &dx);
        self.encoder.backward(&t.enc, &dmem);
    }

    /// Greedy decoding with cached decoder states, one decoder application
    /// per step. With `forced_len`, exactly that many steps run and the end
    /// marker is never chosen.
    fn decode(
        &self,
        tokens: &[&str],
        shape: Option<&InferenceShape>,
        forced_len: Option<usize>,
    ) -> Result<(Vec<Symbol>, usize, bool), (usize, ModelError)> {
        let n = tokens.len();
        let (memory, _, mask) = self.encode(tokens, shape.map(|s| s.tokens), None).map_err(|e| (0, e))?;
        let limit = forced_len.map_or(self.config.max_decode_len + 1, |l| l.min(self.config.max_decode_len + 1));
        let tok_rows: Vec<usize> = (1..=n).collect();
        let keys = memory.gather_rows(&tok_rows);
        let mut state = self.decoder.start(&memory, mask.as_deref()).map_err(|e| (0, e.into()))?;
        let mut previous = BOS;
        let mut symbols = Vec::new();
        let mut steps = 0;
        while steps < limit {
            let step = |state: &mut _| -> Result<Tensor<F>, ModelError> {
                let mut x = self.targets.infer(&[previous])?;
                x.add_assign(&self.positions.infer(&[steps])?);
                let out = self.decoder.step(&x, state)?;
                let gen = self.generate.infer(&out)?;
                let query = self.pointer.infer(&out)?;
                let mut row = Tensor::zeros(&[1, gen.cols() + n]);
                let r = row.row_mut(0);
                r[..gen.cols()].copy_from_slice(gen.row(0));
                for j in 0..n {
                    r[gen.cols() + j] = dot(query.row(0), keys.row(j));
                }
                Ok(row)
            };
            let logits = step(&mut state).map_err(|e| (steps, e))?;
            steps += 1;
            let row = logits.row(0);
            let mut best = usize::MAX;
            for (c, &v) in row.iter().enumerate() {
                if c == BOS || (forced_len.is_some() && c == EOS) {
                    continue;
                }
                if best == usize::MAX || v > row[best] {
                    best = c;
                }
            }
            if best == EOS {
                return Ok((symbols, steps, true));
            }
            if let Some(sym) = self.class_symbol(best) {
                symbols.push(sym);
            }
            previous = best;
        }
        Ok((symbols, steps, false))
    }

    /// Decodes exactly `len` symbols; used to time the decoder at a given
    /// output length independently of what an untrained model would emit.
    pub fn predict_forced(&self, tokens: &[&str], len: usize, shape: Option<&InferenceShape>) -> Prediction {
        match self.decode(tokens, shape, Some(len)) {
            Ok((_, steps, _)) => Prediction { frame: None, tree: None, steps, failure: None },
            Err((steps, e)) => Prediction::failed(steps, e),
        }
    }
}

impl<F: Scalar> Parser<F> for Seq2Seq<F> {
    fn family(&self) -> ModelFamily {
        ModelFamily::Seq2Seq
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

    /// One decoder application per emitted symbol, end marker included.
    fn predict(&self, tokens: &[&str], shape: Option<&InferenceShape>) -> Prediction {
        let (symbols, steps, finished) = match self.decode(tokens, shape, None) {
            Ok(r) => r,
            Err((steps, e)) => return Prediction::failed(steps, e),
        };
        if !finished {
            return Prediction::failed(steps, "no end symbol within the decode limit");
        }
        match delinearize(&symbols, tokens) {
            Ok(tree) => match decompose(&tree) {
                Ok(frame) => Prediction { frame: Some(frame), tree: Some(tree), steps, failure: None },
                Err(e) => Prediction { frame: None, tree: Some(tree), steps, failure: Some(alloc::format!("{e}")) },
            },
            Err(e) => Prediction::failed(steps, e),
        }
    }
}

impl<F: Scalar> Module<F> for Seq2Seq<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.encoder.visit(f);
        self.targets.visit(f);
        self.positions.visit(f);
        self.decoder.visit(f);
        self.generate.visit(f);
        self.pointer.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.encoder.visit_mut(f);
        self.targets.visit_mut(f);
        self.positions.visit_mut(f);
        self.decoder.visit_mut(f);
        self.generate.visit_mut(f);
        self.pointer.visit_mut(f);
    }
}
