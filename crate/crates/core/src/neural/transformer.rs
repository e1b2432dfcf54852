use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{
    reborrow, dropout, dropout_backward, join, AttentionCache, Embedding, EmbeddingCache, FeedForward, FeedForwardCache,
    KeyValueCache, LayerNorm, LayerNormCache, Module, MultiHeadAttention, NeuralError, Param, Scalar, Tensor,
};

/// Shape of a token encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { vocab_size: 0, dim: 64, heads: 4, layers: 2, ff_dim: 128, max_len: 64, dropout: 0.0, seed: 0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.vocab_size == 0 || self.dim == 0 || self.heads == 0 || self.layers == 0 {
            return Err(NeuralError::InvalidConfig("encoder counts must be positive"));
        }
        if self.ff_dim == 0 || self.max_len == 0 {
            return Err(NeuralError::InvalidConfig("encoder counts must be positive"));
        }
        if self.dim % self.heads != 0 {
            return Err(NeuralError::InvalidConfig("model dimension must be divisible by head count"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NeuralError::InvalidConfig("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

type Dropped<F> = Option<Vec<F>>;

fn maybe_dropout<F: Scalar>(x: &mut Tensor<F>, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> Dropped<F> {
    match rng {
        Some(r) => dropout(x, rate, &mut **r),
        None => None,
    }
}

/// Pre-norm self-attention block followed by a pre-norm feed-forward block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<F> {
    pub norm1: LayerNorm<F>,
    pub attention: MultiHeadAttention<F>,
    pub norm2: LayerNorm<F>,
    pub ffn: FeedForward<F>,
    dropout: f64,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerCache<F> {
    norm1: LayerNormCache<F>,
    attention: AttentionCache<F>,
    drop1: Dropped<F>,
    norm2: LayerNormCache<F>,
    ffn: FeedForwardCache<F>,
    drop2: Dropped<F>,
}

impl<F: Scalar> EncoderLayer<F> {
    pub fn new<R: Rng>(
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        Ok(Self {
            norm1: LayerNorm::new(&join(name, "norm1"), dim),
            attention: MultiHeadAttention::new(&join(name, "attention"), dim, heads, rng)?,
            norm2: LayerNorm::new(&join(name, "norm2"), dim),
            ffn: FeedForward::new(&join(name, "ffn"), dim, ff_dim, rng),
            dropout,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<F>,
        key_valid: Option<&[bool]>,
        causal: bool,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<F>, EncoderLayerCache<F>), NeuralError> {
        let (h, norm1) = self.norm1.forward(x)?;
        let (mut a, attention) = self.attention.forward(&h, &h, key_valid, causal)?;
        let drop1 = maybe_dropout(&mut a, self.dropout, &mut rng);
        a.add_assign(x);
        let (h2, norm2) = self.norm2.forward(&a)?;
        let (mut f, ffn) = self.ffn.forward(&h2)?;
        let drop2 = maybe_dropout(&mut f, self.dropout, &mut rng);
        f.add_assign(&a);
        Ok((f, EncoderLayerCache { norm1, attention, drop1, norm2, ffn, drop2 }))
    }

    pub fn backward(&mut self, cache: &EncoderLayerCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let mut df = dy.clone();
        dropout_backward(&cache.drop2, &mut df);
        let dh2 = self.ffn.backward(&cache.ffn, &df);
        let mut da = self.norm2.backward(&cache.norm2, &dh2);
        da.add_assign(dy);
        let mut dattn = da.clone();
        dropout_backward(&cache.drop1, &mut dattn);
        let (dq, dkv) = self.attention.backward(&cache.attention, &dattn);
        let mut dh = dq;
        dh.add_assign(&dkv);
        let mut dx = self.norm1.backward(&cache.norm1, &dh);
        dx.add_assign(&da);
        dx
    }
}

impl<F: Scalar> Module<F> for EncoderLayer<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.norm1.visit(f);
        self.attention.visit(f);
        self.norm2.visit(f);
        self.ffn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.norm1.visit_mut(f);
        self.attention.visit_mut(f);
        self.norm2.visit_mut(f);
        self.ffn.visit_mut(f);
    }
}

/// Stack of encoder layers with a closing layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerStack<F> {
    pub layers: Vec<EncoderLayer<F>>,
    pub final_norm: LayerNorm<F>,
}

#[derive(Debug, Clone)]
pub struct StackCache<F> {
    layers: Vec<EncoderLayerCache<F>>,
    final_norm: LayerNormCache<F>,
}

impl<F: Scalar> TransformerStack<F> {
    pub fn new<R: Rng>(
        name: &str,
        dim: usize,
        heads: usize,
        layers: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        let layers = (0..layers)
            .map(|i| EncoderLayer::new(&join(name, &format!("layer{i}")), dim, heads, ff_dim, dropout, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers, final_norm: LayerNorm::new(&join(name, "final_norm"), dim) })
    }

    pub fn forward(
        &self,
        x: &Tensor<F>,
        key_valid: Option<&[bool]>,
        causal: bool,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<F>, StackCache<F>), NeuralError> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, key_valid, causal, reborrow(&mut rng))?;
            h = next;
            caches.push(cache);
        }
        let (y, final_norm) = self.final_norm.forward(&h)?;
        Ok((y, StackCache { layers: caches, final_norm }))
    }

    pub fn backward(&mut self, cache: &StackCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let mut d = self.final_norm.backward(&cache.final_norm, dy);
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            d = layer.backward(c, &d);
        }
        d
    }
}

impl<F: Scalar> Module<F> for TransformerStack<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.layers.iter().for_each(|l| l.visit(f));
        self.final_norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
        self.final_norm.visit_mut(f);
    }
}

/// Token and learned position embeddings feeding a [`TransformerStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<F> {
    pub tokens: Embedding<F>,
    pub positions: Embedding<F>,
    pub stack: TransformerStack<F>,
    dropout: f64,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<F> {
    tokens: EmbeddingCache,
    positions: EmbeddingCache,
    drop: Dropped<F>,
    stack: StackCache<F>,
}

impl<F: Scalar> Encoder<F> {
    pub fn new<R: Rng>(name: &str, config: &EncoderConfig, rng: &mut R) -> Result<Self, NeuralError> {
        config.validate()?;
        Ok(Self {
            tokens: Embedding::new(&join(name, "tokens"), config.vocab_size, config.dim, rng),
            positions: Embedding::new(&join(name, "positions"), config.max_len, config.dim, rng),
            stack: TransformerStack::new(
                &join(name, "stack"),
                config.dim,
                config.heads,
                config.layers,
                config.ff_dim,
                config.dropout,
                rng,
            )?,
            dropout: config.dropout,
        })
    }

    pub fn max_len(&self) -> usize {
        self.positions.vocab_size()
    }

    pub fn forward(
        &self,
        ids: &[usize],
        key_valid: Option<&[bool]>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<F>, EncoderCache<F>), NeuralError> {
        if ids.len() > self.max_len() {
            return Err(NeuralError::SequenceTooLong { len: ids.len(), max: self.max_len() });
        }
        let pos: Vec<usize> = (0..ids.len()).collect();
        let (mut x, tokens) = self.tokens.forward(ids)?;
        let (p, positions) = self.positions.forward(&pos)?;
        x.add_assign(&p);
        let drop = maybe_dropout(&mut x, self.dropout, &mut rng);
        let (y, stack) = self.stack.forward(&x, key_valid, false, rng)?;
        Ok((y, EncoderCache { tokens, positions, drop, stack }))
    }

    pub fn backward(&mut self, cache: &EncoderCache<F>, dy: &Tensor<F>) {
        let mut dx = self.stack.backward(&cache.stack, dy);
        dropout_backward(&cache.drop, &mut dx);
        self.tokens.backward(&cache.tokens, &dx);
        self.positions.backward(&cache.positions, &dx);
    }
}

impl<F: Scalar> Module<F> for Encoder<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.tokens.visit(f);
        self.positions.visit(f);
        self.stack.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.tokens.visit_mut(f);
        self.positions.visit_mut(f);
        self.stack.visit_mut(f);
    }
}

/// Pre-norm causal self-attention, cross-attention and feed-forward blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<F> {
    pub norm1: LayerNorm<F>,
    pub self_attention: MultiHeadAttention<F>,
    pub norm2: LayerNorm<F>,
    pub cross_attention: MultiHeadAttention<F>,
    pub norm3: LayerNorm<F>,
    pub ffn: FeedForward<F>,
}

#[derive(Debug, Clone)]
pub struct DecoderLayerCache<F> {
    norm1: LayerNormCache<F>,
    self_attention: AttentionCache<F>,
    norm2: LayerNormCache<F>,
    cross_attention: AttentionCache<F>,
    norm3: LayerNormCache<F>,
    ffn: FeedForwardCache<F>,
}

impl<F: Scalar> DecoderLayer<F> {
    pub fn new<R: Rng>(name: &str, dim: usize, heads: usize, ff_dim: usize, rng: &mut R) -> Result<Self, NeuralError> {
        Ok(Self {
            norm1: LayerNorm::new(&join(name, "norm1"), dim),
            self_attention: MultiHeadAttention::new(&join(name, "self_attention"), dim, heads, rng)?,
            norm2: LayerNorm::new(&join(name, "norm2"), dim),
            cross_attention: MultiHeadAttention::new(&join(name, "cross_attention"), dim, heads, rng)?,
            norm3: LayerNorm::new(&join(name, "norm3"), dim),
            ffn: FeedForward::new(&join(name, "ffn"), dim, ff_dim, rng),
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<F>,
        memory: &Tensor<F>,
        memory_valid: Option<&[bool]>,
    ) -> Result<(Tensor<F>, DecoderLayerCache<F>), NeuralError> {
        let (h, norm1) = self.norm1.forward(x)?;
        let (mut a, self_attention) = self.self_attention.forward(&h, &h, None, true)?;
        a.add_assign(x);
        let (h2, norm2) = self.norm2.forward(&a)?;
        let (mut b, cross_attention) = self.cross_attention.forward(&h2, memory, memory_valid, false)?;
        b.add_assign(&a);
        let (h3, norm3) = self.norm3.forward(&b)?;
        let (mut y, ffn) = self.ffn.forward(&h3)?;
        y.add_assign(&b);
        Ok((y, DecoderLayerCache { norm1, self_attention, norm2, cross_attention, norm3, ffn }))
    }

    /// Output for one new row `x` given the caches of the earlier rows; the
    /// self-attention cache is extended with `x`.
    pub fn step(
        &self,
        x: &Tensor<F>,
        own: &mut KeyValueCache<F>,
        memory: &KeyValueCache<F>,
    ) -> Result<Tensor<F>, NeuralError> {
        let h = self.norm1.forward(x)?.0;
        self.self_attention.extend(own, &h)?;
        let mut a = self.self_attention.attend(&h, own)?;
        a.add_assign(x);
        let h2 = self.norm2.forward(&a)?.0;
        let mut b = self.cross_attention.attend(&h2, memory)?;
        b.add_assign(&a);
        let mut y = self.ffn.forward(&self.norm3.forward(&b)?.0)?.0;
        y.add_assign(&b);
        Ok(y)
    }

    /// Returns gradients for the decoder input and for the memory.
    pub fn backward(&mut self, cache: &DecoderLayerCache<F>, dy: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
        let dh3 = self.ffn.backward(&cache.ffn, dy);
        let mut db = self.norm3.backward(&cache.norm3, &dh3);
        db.add_assign(dy);
        let (dh2, dmem) = self.cross_attention.backward(&cache.cross_attention, &db);
        let mut da = self.norm2.backward(&cache.norm2, &dh2);
        da.add_assign(&db);
        let (dq, dkv) = self.self_attention.backward(&cache.self_attention, &da);
        let mut dh = dq;
        dh.add_assign(&dkv);
        let mut dx = self.norm1.backward(&cache.norm1, &dh);
        dx.add_assign(&da);
        (dx, dmem)
    }
}

impl<F: Scalar> Module<F> for DecoderLayer<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.norm1.visit(f);
        self.self_attention.visit(f);
        self.norm2.visit(f);
        self.cross_attention.visit(f);
        self.norm3.visit(f);
        self.ffn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.norm1.visit_mut(f);
        self.self_attention.visit_mut(f);
        self.norm2.visit_mut(f);
        self.cross_attention.visit_mut(f);
        self.norm3.visit_mut(f);
        self.ffn.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStack<F> {
    pub layers: Vec<DecoderLayer<F>>,
    pub final_norm: LayerNorm<F>,
}

/// Per-layer key/value caches for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecoderState<F> {
    own: Vec<KeyValueCache<F>>,
    memory: Vec<KeyValueCache<F>>,
}

impl<F> DecoderState<F> {
    /// Number of rows decoded so far.
    pub fn len(&self) -> usize {
        self.own.first().map_or(0, KeyValueCache::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct DecoderCache<F> {
    layers: Vec<DecoderLayerCache<F>>,
    final_norm: LayerNormCache<F>,
}

impl<F: Scalar> DecoderStack<F> {
    pub fn new<R: Rng>(
        name: &str,
        dim: usize,
        heads: usize,
        layers: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        let layers = (0..layers)
            .map(|i| DecoderLayer::new(&join(name, &format!("layer{i}")), dim, heads, ff_dim, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers, final_norm: LayerNorm::new(&join(name, "final_norm"), dim) })
    }

    pub fn forward(
        &self,
        x: &Tensor<F>,
        memory: &Tensor<F>,
        memory_valid: Option<&[bool]>,
    ) -> Result<(Tensor<F>, DecoderCache<F>), NeuralError> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, memory, memory_valid)?;
            h = next;
            caches.push(cache);
        }
        let (y, final_norm) = self.final_norm.forward(&h)?;
        Ok((y, DecoderCache { layers: caches, final_norm }))
    }

    /// Caches for decoding against `memory`, with no rows decoded yet.
    pub fn start(&self, memory: &Tensor<F>, memory_valid: Option<&[bool]>) -> Result<DecoderState<F>, NeuralError> {
        let memory = self
            .layers
            .iter()
            .map(|l| l.cross_attention.cache_for(memory, memory_valid))
            .collect::<Result<_, _>>()?;
        let own = self.layers.iter().map(|l| l.self_attention.empty_cache()).collect();
        Ok(DecoderState { own, memory })
    }

    /// Output for the next row `x`; equal to the last row of [`Self::forward`]
    /// over all rows decoded so far.
    pub fn step(&self, x: &Tensor<F>, state: &mut DecoderState<F>) -> Result<Tensor<F>, NeuralError> {
        let mut h = x.clone();
        for ((layer, own), memory) in self.layers.iter().zip(&mut state.own).zip(&state.memory) {
            h = layer.step(&h, own, memory)?;
        }
        Ok(self.final_norm.forward(&h)?.0)
    }

    pub fn backward(&mut self, cache: &DecoderCache<F>, dy: &Tensor<F>, memory_shape: &[usize]) -> (Tensor<F>, Tensor<F>) {
        let mut d = self.final_norm.backward(&cache.final_norm, dy);
        let mut dmem = Tensor::zeros(memory_shape);
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let (dx, dm) = layer.backward(c, &d);
            d = dx;
            dmem.add_assign(&dm);
        }
        (d, dmem)
    }
}

impl<F: Scalar> Module<F> for DecoderStack<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.layers.iter().for_each(|l| l.visit(f));
        self.final_norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
        self.final_norm.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> EncoderConfig {
        EncoderConfig { vocab_size: 10, dim: 8, heads: 2, layers: 2, ff_dim: 16, max_len: 6, dropout: 0.0, seed: 1 }
    }

    #[test]
    fn config_validation() {
        assert!(config().validate().is_ok());
        assert!(EncoderConfig { heads: 3, ..config() }.validate().is_err());
        assert!(EncoderConfig { layers: 0, ..config() }.validate().is_err());
    }

    #[test]
    fn too_long_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::<f32>::new("enc", &config(), &mut rng).unwrap();
        assert_eq!(
            enc.forward(&[1; 7], None, None).err(),
            Some(NeuralError::SequenceTooLong { len: 7, max: 6 })
        );
    }

    #[test]
    fn padded_keys_do_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::<f64>::new("enc", &config(), &mut rng).unwrap();
        let mask = [true, true, true, false, false];
        let (a, _) = enc.forward(&[3, 4, 5, 1, 1], Some(&mask), None).unwrap();
        let (b, _) = enc.forward(&[3, 4, 5, 7, 9], Some(&mask), None).unwrap();
        for i in 0..3 {
            assert_eq!(a.row(i), b.row(i));
        }
    }

    #[test]
    fn incremental_decoding_matches_full_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dec = DecoderStack::<f64>::new("dec", 8, 2, 2, 16, &mut rng).unwrap();
        let memory = Tensor::uniform(&[4, 8], 1.0, &mut rng);
        let x = Tensor::uniform(&[5, 8], 1.0, &mut rng);
        let valid = [true, true, false, true];
        let (full, _) = dec.forward(&x, &memory, Some(&valid)).unwrap();
        let mut state = dec.start(&memory, Some(&valid)).unwrap();
        for t in 0..5 {
            let y = dec.step(&x.gather_rows(&[t]), &mut state).unwrap();
            for (a, b) in y.row(0).iter().zip(full.row(t)) {
                assert!((a - b).abs() < 1e-12, "row {t}: {a} vs {b}");
            }
        }
        assert_eq!(state.len(), 5);
    }
}
